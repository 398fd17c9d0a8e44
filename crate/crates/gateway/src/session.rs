//! The simulation loop thread and the bounded command queue that feeds it.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, SendTimeoutError, Sender, TrySendError};
use upsim::hostagent::AgentPhase;
use upsim::scenario::{EventKind, SimConfig, SimError, Simulation};

use crate::protocol::{Command, ErrorCode, ServerMessage, Snapshot, Speed, MIN_INTERVAL_MS};
use crate::GatewayError;

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;
/// Per-subscriber buffer of outbound lines.
pub const SUBSCRIBER_BUFFER: usize = 1024;
/// A subscriber that cannot take a line within this long is dropped.
pub const SUBSCRIBER_TIMEOUT: Duration = Duration::from_secs(2);

const REALTIME_STEP_US: u64 = 10_000;
const FAST_STEP_US: u64 = 100_000;
const IDLE_POLL: Duration = Duration::from_millis(10);

/// Outbound lines for one connection, in send order.
pub type Outbox = Sender<String>;

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub sim: SimConfig,
    /// Periodic snapshot spacing in simulated time.
    pub interval_ms: u64,
    pub speed: Speed,
    pub queue_capacity: usize,
    pub start_paused: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            interval_ms: 100,
            speed: Speed::Realtime,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            start_paused: false,
        }
    }
}

impl GatewayConfig {
    /// The simulation config with its trace grid set to the snapshot interval.
    pub fn sim_config(&self) -> Result<SimConfig, GatewayError> {
        if self.interval_ms < MIN_INTERVAL_MS {
            return Err(GatewayError::Config(format!(
                "interval_ms must be at least {MIN_INTERVAL_MS}, got {}",
                self.interval_ms
            )));
        }
        if self.queue_capacity == 0 {
            return Err(GatewayError::Config("queue capacity must be at least 1".into()));
        }
        let sim = SimConfig { trace_every_us: self.interval_ms * 1000, ..self.sim.clone() };
        sim.validate().map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(sim)
    }
}

#[derive(Debug)]
pub struct QueuedCommand {
    pub command: Command,
    pub reply: Outbox,
}

/// Producer side of the loop's FIFO. Full queue rejects the newest command.
#[derive(Debug, Clone)]
pub struct CommandQueue {
    tx: Sender<QueuedCommand>,
}

impl CommandQueue {
    pub fn bounded(capacity: usize) -> (Self, Receiver<QueuedCommand>) {
        let (tx, rx) = bounded(capacity);
        (Self { tx }, rx)
    }

    pub fn submit(&self, command: Command, reply: Outbox) -> Result<(), ErrorCode> {
        match self.tx.try_send(QueuedCommand { command, reply }) {
            Ok(()) => Ok(()),
            Err(TrySendError::Full(_)) => Err(ErrorCode::QueueFull),
            Err(TrySendError::Disconnected(_)) => Err(ErrorCode::InvalidState),
        }
    }
}

/// Handles shared with connection threads.
#[derive(Debug, Clone)]
pub struct LoopLink {
    pub commands: CommandQueue,
    pub subscribe: Sender<Outbox>,
}

pub(crate) struct SimLoop {
    sim: Simulation,
    commands: Receiver<QueuedCommand>,
    subscriptions: Receiver<Outbox>,
    subscribers: Vec<Outbox>,
    seq: u64,
    speed: Speed,
    paused: bool,
    /// Simulated time the loop has advanced to.
    horizon_us: u64,
    pace_anchor: Option<(Instant, u64)>,
    stop: Arc<AtomicBool>,
}

impl SimLoop {
    pub(crate) fn new(cfg: &GatewayConfig, stop: Arc<AtomicBool>) -> Result<(Self, LoopLink), GatewayError> {
        let sim_cfg = cfg.sim_config()?;
        let mut sim = Simulation::new(sim_cfg.clone()).map_err(|e| GatewayError::Config(e.to_string()))?;
        sim.schedule(sim_cfg.max_duration_ms * 1000, EventKind::End);
        let (commands, command_rx) = CommandQueue::bounded(cfg.queue_capacity);
        let (sub_tx, sub_rx) = unbounded();
        let this = Self {
            sim,
            commands: command_rx,
            subscriptions: sub_rx,
            subscribers: Vec::new(),
            seq: 0,
            speed: cfg.speed,
            paused: cfg.start_paused,
            horizon_us: 0,
            pace_anchor: None,
            stop,
        };
        Ok((this, LoopLink { commands, subscribe: sub_tx }))
    }

    pub(crate) fn run(mut self) -> Result<(), SimError> {
        while !self.stop.load(Ordering::Relaxed) {
            self.subscribers.extend(self.subscriptions.try_iter());
            self.drain_commands();

            if self.paused || self.sim.is_finished() {
                self.pace_anchor = None;
                match self.commands.recv_timeout(IDLE_POLL) {
                    Ok(cmd) => self.apply(cmd),
                    Err(RecvTimeoutError::Timeout) => {}
                    // Every producer is gone; nothing can resume us.
                    Err(RecvTimeoutError::Disconnected) => std::thread::sleep(IDLE_POLL),
                }
                continue;
            }

            let step = match self.speed {
                Speed::Realtime => REALTIME_STEP_US,
                Speed::Fast => FAST_STEP_US,
            };
            let target = self.horizon_us + step;
            let mut out = Vec::new();
            self.sim.advance_until(target, |o| out.push(o))?;
            self.horizon_us = target;
            for o in &out {
                self.seq += 1;
                let line = ServerMessage::Snapshot(Snapshot::from_observation(self.seq, o)).to_line();
                self.broadcast(&line);
            }
            if self.speed == Speed::Realtime {
                self.pace();
            }
        }
        Ok(())
    }

    fn pace(&mut self) {
        let (wall0, sim0) = *self.pace_anchor.get_or_insert((Instant::now(), self.horizon_us - REALTIME_STEP_US));
        let due = wall0 + Duration::from_micros(self.horizon_us - sim0);
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }

    fn broadcast(&mut self, line: &str) {
        self.subscribers.retain(|s| match s.send_timeout(line.to_string(), SUBSCRIBER_TIMEOUT) {
            Ok(()) => true,
            Err(SendTimeoutError::Timeout(_) | SendTimeoutError::Disconnected(_)) => false,
        });
    }

    fn drain_commands(&mut self) {
        while let Ok(cmd) = self.commands.try_recv() {
            self.apply(cmd);
        }
    }

    fn apply(&mut self, QueuedCommand { command, reply }: QueuedCommand) {
        let Some(apply_us) = self.sim.next_instant_us() else {
            let _ = reply.try_send(ServerMessage::err(ErrorCode::InvalidState, "session has ended").to_line());
            return;
        };
        let result = match command {
            Command::SetMains { volts } => {
                self.sim.schedule(apply_us, EventKind::MainsSet(volts));
                Ok(())
            }
            Command::SetLoad { watts } => {
                self.sim.schedule(apply_us, EventKind::LoadSet(watts));
                Ok(())
            }
            Command::UserAck => {
                let phase = self.sim.agent_state().phase;
                if phase == AgentPhase::Counting {
                    self.sim.schedule(apply_us, EventKind::UserAck);
                    Ok(())
                } else {
                    Err(format!("no countdown in progress (agent is {phase})"))
                }
            }
            Command::SetSpeed { speed } => {
                self.speed = speed;
                self.pace_anchor = None;
                Ok(())
            }
            Command::Pause => {
                self.paused = true;
                Ok(())
            }
            Command::Resume => {
                self.paused = false;
                Ok(())
            }
        };
        let msg = match result {
            Ok(()) => ServerMessage::Ack { apply_t_ms: apply_us as f64 / 1000.0 },
            Err(why) => ServerMessage::err(ErrorCode::InvalidState, why),
        };
        // The reply shares the connection's snapshot channel so it stays in
        // order with the stream.
        let _ = reply.send_timeout(msg.to_line(), SUBSCRIBER_TIMEOUT);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_queue_rejects_newest() {
        let (q, rx) = CommandQueue::bounded(2);
        let (out, _out_rx) = bounded(4);
        assert_eq!(q.submit(Command::SetMains { volts: 200.0 }, out.clone()), Ok(()));
        assert_eq!(q.submit(Command::SetMains { volts: 190.0 }, out.clone()), Ok(()));
        assert_eq!(q.submit(Command::SetMains { volts: 150.0 }, out.clone()), Err(ErrorCode::QueueFull));
        // FIFO, and the rejected command never entered.
        let got: Vec<_> = rx.try_iter().map(|c| c.command).collect();
        assert_eq!(got, vec![Command::SetMains { volts: 200.0 }, Command::SetMains { volts: 190.0 }]);
        assert_eq!(q.submit(Command::Pause, out), Ok(()));
    }

    #[test]
    fn config_checks() {
        let cfg = GatewayConfig { interval_ms: 20, ..GatewayConfig::default() };
        assert!(cfg.sim_config().is_err());
        let cfg = GatewayConfig { interval_ms: 250, ..GatewayConfig::default() };
        assert_eq!(cfg.sim_config().unwrap().trace_every_us, 250_000);
        let cfg = GatewayConfig { queue_capacity: 0, ..GatewayConfig::default() };
        assert!(cfg.sim_config().is_err());
    }

    #[test]
    fn loop_applies_and_acks_in_order() {
        let stop = Arc::new(AtomicBool::new(false));
        let cfg = GatewayConfig { start_paused: true, speed: Speed::Fast, ..GatewayConfig::default() };
        let (mut lp, link) = SimLoop::new(&cfg, stop).unwrap();
        let (out, out_rx) = bounded(16);
        link.commands.submit(Command::SetMains { volts: 150.0 }, out.clone()).unwrap();
        link.commands.submit(Command::UserAck, out.clone()).unwrap();
        link.commands.submit(Command::SetLoad { watts: 100.0 }, out).unwrap();
        lp.drain_commands();
        let lines: Vec<String> = out_rx.try_iter().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("\"ack\"") && lines[0].contains("\"apply_t_ms\":0.0"));
        assert!(lines[1].contains("INVALID_STATE"));
        assert!(lines[2].contains("\"ack\""));
    }
}
