//! PC side of the parallel-port link: frame decoding and the shutdown
//! application's sixty second save window.

use std::fmt;

use crate::controller::{PORT_IDLE, PORT_MAINS_BIT};

/// Length of the save window before the OS shutdown call.
pub const SHUTDOWN_WINDOW_US: u64 = 60_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortFrame {
    pub t_us: u64,
    pub byte: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodedFrame {
    pub on_battery: bool,
    /// The port carries no charger bit. On battery the charging relay cannot
    /// be closed, so the answer is known to be `false`; on mains it is unknown.
    pub charging: Option<bool>,
    pub level_byte: u8,
    /// Odd byte other than the idle 255. The firmware never writes one.
    pub anomalous: bool,
}

/// Stateless decode of one port byte. Bit 0 low means the inverter carries
/// the load; battery frames report their level with the status bit masked.
pub fn decode_frame(f: &PortFrame) -> DecodedFrame {
    let on_battery = f.byte & PORT_MAINS_BIT == 0;
    DecodedFrame {
        on_battery,
        charging: on_battery.then_some(false),
        level_byte: if on_battery { f.byte & !PORT_MAINS_BIT } else { f.byte },
        anomalous: !on_battery && f.byte != PORT_IDLE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentPhase {
    Idle,
    Counting,
    ShutdownIssued,
    Cancelled,
}

impl AgentPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentPhase::Idle => "IDLE",
            AgentPhase::Counting => "COUNTING",
            AgentPhase::ShutdownIssued => "SHUTDOWN_ISSUED",
            AgentPhase::Cancelled => "CANCELLED",
        }
    }
}

impl fmt::Display for AgentPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentState {
    pub phase: AgentPhase,
    pub remaining_us: u64,
    pub user_acked: bool,
}

impl AgentState {
    pub fn idle() -> Self {
        Self { phase: AgentPhase::Idle, remaining_us: 0, user_acked: false }
    }

    pub fn remaining_ms(&self) -> f64 {
        self.remaining_us as f64 / 1000.0
    }
}

impl Default for AgentState {
    fn default() -> Self {
        Self::idle()
    }
}

/// Advances the shutdown protocol by `dt_us`.
///
/// The transition into `Counting` does not consume `dt_us`; the window starts
/// at the step that observed the signal. While counting, a user
/// acknowledgement wins over mains restoration, which wins over the clock.
pub fn agent_step(
    s: &AgentState,
    shutdown_signal: bool,
    mains_restored: bool,
    user_ack: bool,
    dt_us: u64,
) -> AgentState {
    match s.phase {
        AgentPhase::Idle if shutdown_signal => {
            AgentState { phase: AgentPhase::Counting, remaining_us: SHUTDOWN_WINDOW_US, user_acked: false }
        }
        AgentPhase::Idle => *s,
        AgentPhase::Counting if user_ack => {
            AgentState { phase: AgentPhase::ShutdownIssued, remaining_us: s.remaining_us, user_acked: true }
        }
        AgentPhase::Counting if mains_restored => {
            AgentState { phase: AgentPhase::Cancelled, remaining_us: 0, user_acked: false }
        }
        AgentPhase::Counting => {
            let remaining_us = s.remaining_us.saturating_sub(dt_us);
            let phase = if remaining_us == 0 { AgentPhase::ShutdownIssued } else { AgentPhase::Counting };
            AgentState { phase, remaining_us, ..*s }
        }
        AgentPhase::Cancelled => AgentState::idle(),
        AgentPhase::ShutdownIssued => *s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AgentError {
    #[error("shutdown already issued in this session")]
    DoubleShutdown,
    #[error("shutdown requested while agent is {0}")]
    NotIssued(AgentPhase),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShutdownEvent {
    pub t_us: u64,
}

/// Agent plus the one-shot OS shutdown hook.
#[derive(Debug, Clone, Default)]
pub struct HostAgent {
    state: AgentState,
    shutdown_at_us: Option<u64>,
}

impl HostAgent {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn step(&mut self, shutdown_signal: bool, mains_restored: bool, user_ack: bool, dt_us: u64) -> AgentPhase {
        self.state = agent_step(&self.state, shutdown_signal, mains_restored, user_ack, dt_us);
        self.state.phase
    }

    pub fn shutdown_issued_at(&self) -> Option<u64> {
        self.shutdown_at_us
    }

    /// Calls the (simulated) OS shutdown. Valid once, after the agent has
    /// reached `ShutdownIssued`.
    pub fn shutdown_effect(&mut self, t_us: u64) -> Result<ShutdownEvent, AgentError> {
        if self.shutdown_at_us.is_some() {
            return Err(AgentError::DoubleShutdown);
        }
        if self.state.phase != AgentPhase::ShutdownIssued {
            return Err(AgentError::NotIssued(self.state.phase));
        }
        self.shutdown_at_us = Some(t_us);
        Ok(ShutdownEvent { t_us })
    }
}
