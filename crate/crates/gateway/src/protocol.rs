//! Wire messages. One JSON object per line, discriminated by `"type"`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use upsim::controller::{ControllerMode, Thresholds};
use upsim::plant::{oscillator_frequency, Battery, InverterSpec};
use upsim::scenario::Observation;

pub const DEFAULT_PORT: u16 = 7817;
pub const PROTOCOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const MAX_MAINS_V: f64 = 260.0;
/// Nameplate output rating, 650VA.
pub const MAX_LOAD_W: f64 = 650.0;
pub const RATED_OUTPUT_VA: f64 = 650.0;
pub const MIN_INTERVAL_MS: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speed {
    /// One simulated millisecond per wall-clock millisecond.
    #[default]
    Realtime,
    /// Unthrottled.
    Fast,
}

impl Speed {
    pub fn as_str(self) -> &'static str {
        match self {
            Speed::Realtime => "realtime",
            Speed::Fast => "fast",
        }
    }
}

impl fmt::Display for Speed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Speed {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "realtime" => Ok(Speed::Realtime),
            "fast" => Ok(Speed::Fast),
            other => Err(format!("unknown speed `{other}` (expected realtime or fast)")),
        }
    }
}

/// Operator actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    SetMains { volts: f64 },
    SetLoad { watts: f64 },
    UserAck,
    SetSpeed { speed: Speed },
    Pause,
    Resume,
}

impl Command {
    pub fn validate(&self) -> Result<(), ErrorCode> {
        let in_range = |x: f64, hi: f64| x.is_finite() && (0.0..=hi).contains(&x);
        match *self {
            Command::SetMains { volts } if !in_range(volts, MAX_MAINS_V) => Err(ErrorCode::OutOfRange),
            Command::SetLoad { watts } if !in_range(watts, MAX_LOAD_W) => Err(ErrorCode::OutOfRange),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello,
    Cmd(Command),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    OutOfRange,
    QueueFull,
    InvalidState,
    ReadOnly,
    BadRequest,
    HelloRequired,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::OutOfRange => "OUT_OF_RANGE",
            ErrorCode::QueueFull => "QUEUE_FULL",
            ErrorCode::InvalidState => "INVALID_STATE",
            ErrorCode::ReadOnly => "READ_ONLY",
            ErrorCode::BadRequest => "BAD_REQUEST",
            ErrorCode::HelloRequired => "HELLO_REQUIRED",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdInfo {
    pub switch_ac_v: f64,
    pub safe_battery_v: f64,
    pub charge_start_v: f64,
    pub charge_full_v: f64,
}

impl From<&Thresholds> for ThresholdInfo {
    fn from(t: &Thresholds) -> Self {
        Self {
            switch_ac_v: t.switch_ac_v,
            safe_battery_v: t.safe_battery_v,
            charge_start_v: t.charge_start_v,
            charge_full_v: t.charge_full_v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryInfo {
    pub nominal_v: f64,
    pub capacity_ah: f64,
    pub v_empty: f64,
    pub v_full: f64,
}

impl From<&Battery> for BatteryInfo {
    fn from(b: &Battery) -> Self {
        Self { nominal_v: b.nominal_v, capacity_ah: b.capacity_ah, v_empty: b.v_empty, v_full: b.v_full }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputInfo {
    pub volts: f64,
    pub frequency_hz: f64,
    pub va: f64,
}

impl From<&InverterSpec> for OutputInfo {
    fn from(s: &InverterSpec) -> Self {
        let f = oscillator_frequency(s.r1_ohms, s.r2_ohms, s.c_farads).unwrap_or(0.0) / 2.0;
        Self { volts: s.rated_output_v, frequency_hz: (f * 1e6).round() / 1e6, va: RATED_OUTPUT_VA }
    }
}

/// Reply to `hello`: the constants a client needs to draw its scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub version: String,
    pub mode: String,
    pub thresholds: ThresholdInfo,
    pub battery: BatteryInfo,
    pub output: OutputInfo,
    pub interval_ms: u64,
    pub speed: Speed,
    /// Whether this connection may send state-changing commands.
    pub writer: bool,
}

impl SessionInfo {
    pub fn new(
        mode: ControllerMode,
        thresholds: &Thresholds,
        battery: &Battery,
        inverter: &InverterSpec,
        interval_ms: u64,
        speed: Speed,
        writer: bool,
    ) -> Self {
        Self {
            version: PROTOCOL_VERSION.to_string(),
            mode: mode.as_str().to_string(),
            thresholds: thresholds.into(),
            battery: battery.into(),
            output: inverter.into(),
            interval_ms,
            speed,
            writer,
        }
    }
}

/// Loop state at one traced instant. Shares its fields with the trace row for
/// the same instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub sim_t_ms: f64,
    pub mains_v: f64,
    pub source: String,
    pub batt_v: f64,
    pub soc_pct: f64,
    pub charging: bool,
    pub rla1: bool,
    pub rla2: bool,
    pub load_v: f64,
    pub load_w: f64,
    pub agent_phase: String,
    pub remaining_ms: f64,
    pub fuse_blown: bool,
    /// Discrete events at this instant, `|`-joined as in the trace; empty for
    /// periodic snapshots.
    pub event_tag: String,
}

impl Snapshot {
    pub fn from_observation(seq: u64, o: &Observation) -> Self {
        Self {
            seq,
            sim_t_ms: o.t_ms(),
            mains_v: o.mains_v,
            source: o.source.as_str().to_string(),
            batt_v: o.batt_v,
            soc_pct: o.soc_pct,
            charging: o.charging,
            rla1: o.rla1,
            rla2: o.rla2,
            load_v: o.load_v,
            load_w: o.load_w,
            agent_phase: o.agent_phase.as_str().to_string(),
            remaining_ms: o.remaining_ms,
            fuse_blown: o.fuse_blown,
            event_tag: o.tags.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("|"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Session(SessionInfo),
    Snapshot(Snapshot),
    Ack { apply_t_ms: f64 },
    Err { code: ErrorCode, message: String },
}

impl ServerMessage {
    pub fn err(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Err { code, message: message.into() }
    }

    /// The message as one wire line, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}
