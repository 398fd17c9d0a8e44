//! Discrete-event engine that binds the plant, the firmware and the host agent.
//!
//! Scripts are parsed into [`ScenarioEvent`]s, [`run`] replays them through a
//! [`Simulation`] and returns the [`TraceRecord`]s that [`write_trace`] turns
//! into CSV.
//!
//! Actions sharing a timestamp are applied in a fixed order: scenario events,
//! then the Timer0 tick (if due), then plant settling and the host agent, and
//! finally the trace row.

mod engine;
mod parse;
mod trace;

use crate::controller::{ControllerError, ControllerMode, Thresholds};
use crate::plant::{Battery, InverterSpec, PlantError, RectifierFilterSpec, TransformerSpec};

pub use engine::{EventTag, Observation, Simulation};
pub use parse::parse_scenario;
pub use trace::{write_trace, TraceRecord, TRACE_HEADER};

/// 24 simulated hours.
pub const MAX_DURATION_MS: u64 = 24 * 60 * 60 * 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    MainsSet(f64),
    LoadSet(f64),
    UserAck,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioEvent {
    pub at_ms: u64,
    pub kind: EventKind,
}

impl ScenarioEvent {
    pub fn new(at_ms: u64, kind: EventKind) -> Self {
        Self { at_ms, kind }
    }

    pub fn at_us(&self) -> u64 {
        self.at_ms * 1000
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("scenario has no `end` directive")]
    MissingEnd,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("invalid event list: {0}")]
    Events(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Plant integration step.
    pub plant_dt_us: u64,
    pub trace_every_us: u64,
    pub mode: ControllerMode,
    pub thresholds: Thresholds,
    /// Battery at t = 0, including its initial charge.
    pub battery: Battery,
    pub inverter: InverterSpec,
    pub transformer: TransformerSpec,
    pub rectifier: RectifierFilterSpec,
    pub fuse_rating_a: f64,
    pub mains_freq_hz: f64,
    pub initial_mains_v: f64,
    pub initial_load_w: f64,
    /// Constant current into the battery while RLA1 is closed.
    pub charge_current_a: f64,
    /// Relay coils, comparator and MCU drawn from the rectifier.
    pub housekeeping_current_a: f64,
    pub max_duration_ms: u64,
}

impl SimConfig {
    pub fn with_plant_dt_ms(mut self, ms: f64) -> Self {
        self.plant_dt_us = (ms * 1000.0).round() as u64;
        self
    }

    pub fn with_mode(mut self, mode: ControllerMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_battery_voltage(mut self, volts: f64) -> Self {
        self.battery = self.battery.at_voltage(volts);
        self
    }

    pub fn plant_dt_ms(&self) -> f64 {
        self.plant_dt_us as f64 / 1000.0
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.plant_dt_us == 0 {
            return Err(SimError::Config("plant step must be at least 1µs".into()));
        }
        if self.trace_every_us < self.plant_dt_us || self.trace_every_us % self.plant_dt_us != 0 {
            return Err(SimError::Config(format!(
                "trace interval {}µs must be a multiple of the plant step {}µs",
                self.trace_every_us, self.plant_dt_us
            )));
        }
        self.thresholds.validate()?;
        self.battery.validate()?;
        self.inverter.validate()?;
        self.transformer.validate()?;
        self.rectifier.validate()?;
        let finite_non_negative = [
            ("fuse_rating_a", self.fuse_rating_a),
            ("initial_mains_v", self.initial_mains_v),
            ("initial_load_w", self.initial_load_w),
            ("charge_current_a", self.charge_current_a),
            ("housekeeping_current_a", self.housekeeping_current_a),
        ];
        for (name, v) in finite_non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.fuse_rating_a > 0.0 && self.mains_freq_hz > 0.0) {
            return Err(SimError::Config("fuse rating and mains frequency must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            plant_dt_us: 1_000,
            trace_every_us: 100_000,
            mode: ControllerMode::Specified,
            thresholds: Thresholds::default(),
            battery: Battery::sealed_12v_17ah(),
            inverter: InverterSpec::default(),
            transformer: TransformerSpec::default(),
            rectifier: RectifierFilterSpec::default(),
            fuse_rating_a: 13.0,
            mains_freq_hz: 50.0,
            initial_mains_v: 220.0,
            initial_load_w: 484.0,
            charge_current_a: 2.0,
            housekeeping_current_a: 0.15,
            max_duration_ms: MAX_DURATION_MS,
        }
    }
}

/// Replays `events` and returns the trace. The run stops after the `END`
/// instant or at `max_duration_ms`, whichever comes first.
pub fn run(events: &[ScenarioEvent], cfg: &SimConfig) -> Result<Vec<TraceRecord>, SimError> {
    let mut records = Vec::new();
    run_observed(events, cfg, |obs| records.push(TraceRecord::from(obs)))?;
    Ok(records)
}

/// [`run`] with access to the full observation behind each trace row.
pub fn run_observed(
    events: &[ScenarioEvent],
    cfg: &SimConfig,
    mut sink: impl FnMut(&Observation),
) -> Result<(), SimError> {
    let ends = events.iter().filter(|e| e.kind == EventKind::End).count();
    if ends != 1 {
        return Err(SimError::Events(format!("expected exactly one END, found {ends}")));
    }
    let mut sim = Simulation::new(cfg.clone())?;
    for e in events {
        sim.schedule(e.at_us(), e.kind);
    }
    sim.schedule(cfg.max_duration_ms * 1000, EventKind::End);
    while !sim.is_finished() {
        if let Some(obs) = sim.step_instant()? {
            sink(&obs);
        }
    }
    Ok(())
}
