use std::collections::BTreeMap;
use std::fmt;

use super::{EventKind, SimConfig, SimError};
use crate::controller::{control_step, power_on_settled, McuState, PpDataTable};
use crate::hostagent::{decode_frame, AgentPhase, AgentState, HostAgent, PortFrame};
use crate::plant::{
    battery_step, battery_voltage, fuse_check, inverter_output, rectify_filter, regulate, transformer_secondary,
    AcSource, Battery, Fuse, LoadSource, PlantState, RegulatorSpec,
};

/// MCU supply current on the 5V rail.
const MCU_CURRENT_A: f64 = 0.02;

/// Discrete occurrences recorded in the trace `event_tag` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventTag {
    TransferInverter,
    TransferMains,
    ChargeStart,
    ChargeStop,
    CountdownStart,
    CountdownCancel,
    Shutdown,
    FuseBlown,
    InverterOverload,
    PortAnomaly,
}

impl EventTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EventTag::TransferInverter => "TRANSFER_INVERTER",
            EventTag::TransferMains => "TRANSFER_MAINS",
            EventTag::ChargeStart => "CHARGE_START",
            EventTag::ChargeStop => "CHARGE_STOP",
            EventTag::CountdownStart => "COUNTDOWN_START",
            EventTag::CountdownCancel => "COUNTDOWN_CANCEL",
            EventTag::Shutdown => "SHUTDOWN",
            EventTag::FuseBlown => "FUSE_BLOWN",
            EventTag::InverterOverload => "INVERTER_OVERLOAD",
            EventTag::PortAnomaly => "PORT_ANOMALY",
        }
    }
}

impl fmt::Display for EventTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full state at one emitted instant. Trace rows and gateway snapshots are
/// both projections of this.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub t_us: u64,
    pub mains_v: f64,
    pub source: LoadSource,
    pub batt_v: f64,
    pub soc_pct: f64,
    pub charging: bool,
    pub rla1: bool,
    pub rla2: bool,
    pub load_v: f64,
    pub load_w: f64,
    pub pp_byte: u8,
    pub agent_phase: AgentPhase,
    pub remaining_ms: f64,
    pub fuse_blown: bool,
    /// Discrete events at this instant, in detection order.
    pub tags: Vec<EventTag>,
}

impl Observation {
    pub fn t_ms(&self) -> f64 {
        self.t_us as f64 / 1000.0
    }

    pub fn has(&self, tag: EventTag) -> bool {
        self.tags.contains(&tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Derived {
    source: LoadSource,
    load_v: f64,
    rail_15v: f64,
    rail_5v: f64,
    battery_current_a: f64,
    overloaded: bool,
}

impl Default for Derived {
    fn default() -> Self {
        Self {
            source: LoadSource::None,
            load_v: 0.0,
            rail_15v: 0.0,
            rail_5v: 0.0,
            battery_current_a: 0.0,
            overloaded: false,
        }
    }
}

/// Steppable simulation. [`super::run`] drives one to completion; the gateway
/// drives one incrementally and injects operator commands with
/// [`Simulation::schedule`].
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: SimConfig,
    table: PpDataTable,
    now_us: u64,
    started: bool,
    finished: bool,

    mains: AcSource,
    battery: Battery,
    fuse: Fuse,
    load_w: f64,
    rla1: bool,
    rla2: bool,
    derived: Derived,

    mcu: McuState,
    agent: HostAgent,
    port_on_battery: bool,
    shutdown_signal: bool,
    pending_ack: bool,

    last_integrated_us: u64,
    last_agent_us: u64,
    queue: BTreeMap<(u64, u64), EventKind>,
    queue_seq: u64,
    next_plant_us: u64,
    next_trace_us: u64,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        Ok(Self {
            table: PpDataTable::firmware(),
            now_us: 0,
            started: false,
            finished: false,
            mains: AcSource::new(cfg.initial_mains_v, cfg.mains_freq_hz),
            battery: cfg.battery,
            fuse: Fuse::new(cfg.fuse_rating_a),
            load_w: cfg.initial_load_w,
            rla1: false,
            rla2: false,
            derived: Derived::default(),
            mcu: crate::controller::mcu_reset_with_mode(cfg.mode),
            agent: HostAgent::new(),
            port_on_battery: false,
            shutdown_signal: false,
            pending_ack: false,
            last_integrated_us: 0,
            last_agent_us: 0,
            queue: BTreeMap::new(),
            queue_seq: 0,
            next_plant_us: 0,
            next_trace_us: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Time of the last processed instant.
    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn battery(&self) -> &Battery {
        &self.battery
    }

    pub fn battery_voltage(&self) -> f64 {
        battery_voltage(&self.battery)
    }

    pub fn mcu(&self) -> &McuState {
        &self.mcu
    }

    pub fn agent_state(&self) -> &AgentState {
        self.agent.state()
    }

    pub fn load_w(&self) -> f64 {
        self.load_w
    }

    pub fn plant_state(&self) -> PlantState {
        PlantState {
            mains: self.mains,
            battery: self.battery,
            fuse: self.fuse,
            rail_15v: self.derived.rail_15v,
            rail_5v: self.derived.rail_5v,
            load_v_rms: self.derived.load_v,
            load_source: self.derived.source,
            rla1_energized: self.rla1,
            rla2_energized: self.rla2,
        }
    }

    /// Queues an event. Times already processed are moved to the next instant.
    pub fn schedule(&mut self, at_us: u64, kind: EventKind) {
        let at_us = if self.started && at_us <= self.now_us { self.next_grid_instant() } else { at_us };
        self.queue.insert((at_us, self.queue_seq), kind);
        self.queue_seq += 1;
    }

    fn next_grid_instant(&self) -> u64 {
        self.next_plant_us.min(self.mcu.next_tick_us).min(self.next_trace_us)
    }

    /// Time the next call to [`Self::step_instant`] will process.
    pub fn next_instant_us(&self) -> Option<u64> {
        if self.finished {
            return None;
        }
        let grid = self.next_grid_instant();
        Some(self.queue.keys().next().map_or(grid, |&(t, _)| t.min(grid)))
    }

    /// Current state as an untagged observation.
    pub fn observe(&self) -> Observation {
        self.observation(Vec::new())
    }

    /// Processes every instant up to and including `t_us`.
    pub fn advance_until(&mut self, t_us: u64, mut sink: impl FnMut(Observation)) -> Result<(), SimError> {
        while let Some(next) = self.next_instant_us() {
            if next > t_us {
                break;
            }
            if let Some(obs) = self.step_instant()? {
                sink(obs);
            }
        }
        Ok(())
    }

    /// Processes the next instant. Returns the observation when that instant
    /// produces a trace row (trace grid or discrete event).
    pub fn step_instant(&mut self) -> Result<Option<Observation>, SimError> {
        let Some(t) = self.next_instant_us() else {
            return Ok(None);
        };
        let mut tags = Vec::new();

        self.integrate_to(t);
        self.now_us = t;
        if self.started {
            self.settle(&mut tags);
        }

        let mut end = false;
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 != t {
                break;
            }
            match entry.remove() {
                EventKind::MainsSet(v) => self.mains.rms_volts = v.max(0.0),
                EventKind::LoadSet(w) => {
                    // A PC that has been shut down stays off.
                    if self.agent.shutdown_issued_at().is_none() {
                        self.load_w = w.max(0.0);
                    }
                }
                EventKind::UserAck => self.pending_ack = true,
                EventKind::End => end = true,
            }
        }

        if !self.started {
            self.power_on();
            self.started = true;
        }
        self.settle(&mut tags);

        if self.mcu.next_tick_us == t {
            self.tick(t, &mut tags)?;
            self.settle(&mut tags);
        }

        self.update_agent(t, &mut tags);

        if t == self.next_plant_us {
            self.next_plant_us += self.cfg.plant_dt_us;
        }
        let periodic = t == self.next_trace_us;
        if periodic {
            self.next_trace_us += self.cfg.trace_every_us;
        }
        if end {
            self.finished = true;
        }
        Ok((periodic || !tags.is_empty()).then(|| self.observation(tags)))
    }

    fn mains_effective(&self) -> f64 {
        if self.fuse.blown {
            0.0
        } else {
            self.mains.effective_rms()
        }
    }

    /// Controller state as if it had been running under the t = 0 inputs.
    fn power_on(&mut self) {
        self.mcu = power_on_settled(
            self.cfg.mode,
            self.battery_voltage(),
            self.mains_effective(),
            &self.cfg.thresholds,
            &self.table,
        );
        let relays = self.mcu.relays();
        self.rla1 = relays.rla1_energized;
        self.rla2 = relays.rla2_energized;
        self.port_on_battery = decode_frame(&PortFrame { t_us: 0, byte: self.mcu.pp_byte }).on_battery;
        self.shutdown_signal = self.mcu.safe_battery_latched;
    }

    fn integrate_to(&mut self, t: u64) {
        if t > self.last_integrated_us {
            let dt_s = (t - self.last_integrated_us) as f64 / 1e6;
            self.battery = battery_step(&self.battery, self.derived.battery_current_a, dt_s);
            self.last_integrated_us = t;
        }
    }

    /// Recomputes every quantity that follows from the relays and sources.
    fn settle(&mut self, tags: &mut Vec<EventTag>) {
        let cfg = &self.cfg;
        loop {
            let mains_eff = self.mains_effective();
            let batt_v = battery_voltage(&self.battery);

            let secondary = transformer_secondary(mains_eff, &cfg.transformer);
            let dc = rectify_filter(secondary, cfg.housekeeping_current_a, &cfg.rectifier, cfg.mains_freq_hz);
            let rail_15v =
                regulate(dc.trough_volts(), &RegulatorSpec::LM7815, cfg.housekeeping_current_a).unwrap_or(0.0);
            // The 5V regulator is diode-OR fed from the rectifier and the battery.
            let feed_5v = (dc.trough_volts().max(batt_v) - cfg.rectifier.diode_drop_v).max(0.0);
            let rail_5v = regulate(feed_5v, &RegulatorSpec::LM78L05, MCU_CURRENT_A).unwrap_or(0.0);

            let charging_now = self.rla1 && rail_15v > batt_v;
            let mut overloaded = false;
            let (source, load_v, discharge_a) = if self.rla2 {
                if mains_eff > 0.0 {
                    (LoadSource::Mains, mains_eff, 0.0)
                } else {
                    (LoadSource::None, 0.0, 0.0)
                }
            } else {
                match inverter_output(batt_v, &cfg.inverter, self.load_w) {
                    Ok(out) if out.ac_rms > 0.0 => (LoadSource::Inverter, out.ac_rms, out.battery_current_a),
                    Ok(_) => (LoadSource::None, 0.0, 0.0),
                    Err(_) => {
                        overloaded = true;
                        (LoadSource::None, 0.0, 0.0)
                    }
                }
            };
            let charge_a = if charging_now { cfg.charge_current_a } else { 0.0 };

            if overloaded && !self.derived.overloaded {
                tags.push(EventTag::InverterOverload);
            }
            self.derived =
                Derived { source, load_v, rail_15v, rail_5v, battery_current_a: charge_a - discharge_a, overloaded };

            let mains_current = if mains_eff > 0.0 {
                let load = if source == LoadSource::Mains { self.load_w } else { 0.0 };
                (load + charge_a * rail_15v) / mains_eff
            } else {
                0.0
            };
            let fuse = fuse_check(&self.fuse, mains_current);
            if fuse.blown && !self.fuse.blown {
                self.fuse = fuse;
                tags.push(EventTag::FuseBlown);
                continue;
            }
            break;
        }
    }

    fn tick(&mut self, t: u64, tags: &mut Vec<EventTag>) -> Result<(), SimError> {
        let out = control_step(
            &self.mcu,
            t,
            self.battery_voltage(),
            self.mains_effective(),
            &self.cfg.thresholds,
            &self.table,
        )?;
        self.mcu = out.state;
        if !out.control_pass {
            return Ok(());
        }
        match (self.rla2, out.relays.rla2_energized) {
            (true, false) => tags.push(EventTag::TransferInverter),
            (false, true) => tags.push(EventTag::TransferMains),
            _ => {}
        }
        match (self.rla1, out.relays.rla1_energized) {
            (false, true) => tags.push(EventTag::ChargeStart),
            (true, false) => tags.push(EventTag::ChargeStop),
            _ => {}
        }
        self.rla1 = out.relays.rla1_energized;
        self.rla2 = out.relays.rla2_energized;

        let frame = decode_frame(&PortFrame { t_us: t, byte: out.pp_byte });
        if frame.anomalous {
            tags.push(EventTag::PortAnomaly);
        }
        self.port_on_battery = frame.on_battery;
        self.shutdown_signal = out.shutdown;
        Ok(())
    }

    fn update_agent(&mut self, t: u64, tags: &mut Vec<EventTag>) {
        let dt_us = t - self.last_agent_us;
        self.last_agent_us = t;
        let before = self.agent.state().phase;
        let ack = std::mem::take(&mut self.pending_ack);
        let after = self.agent.step(self.shutdown_signal, !self.port_on_battery, ack, dt_us);
        match (before, after) {
            (AgentPhase::Idle, AgentPhase::Counting) => tags.push(EventTag::CountdownStart),
            (AgentPhase::Counting, AgentPhase::Cancelled) => tags.push(EventTag::CountdownCancel),
            (AgentPhase::Counting, AgentPhase::ShutdownIssued) if self.agent.shutdown_effect(t).is_ok() => {
                tags.push(EventTag::Shutdown);
                self.load_w = 0.0;
                self.settle(tags);
            }
            _ => {}
        }
    }

    fn observation(&self, tags: Vec<EventTag>) -> Observation {
        let agent = self.agent.state();
        Observation {
            t_us: self.now_us,
            mains_v: self.mains.effective_rms(),
            source: self.derived.source,
            batt_v: self.battery_voltage(),
            soc_pct: 100.0 * self.battery.soc(),
            charging: self.mcu.charger_active,
            rla1: self.rla1,
            rla2: self.rla2,
            load_v: self.derived.load_v,
            load_w: self.load_w,
            pp_byte: self.mcu.pp_byte,
            agent_phase: agent.phase,
            remaining_ms: agent.remaining_ms(),
            fuse_blown: self.fuse.blown,
            tags,
        }
    }
}
