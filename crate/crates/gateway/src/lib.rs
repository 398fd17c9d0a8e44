//! Live telemetry and operator commands for a running simulation.
//!
//! Clients connect over TCP and exchange newline-delimited JSON. The first
//! client message must be `{"type":"hello"}`; the server answers with a
//! `session` description and then streams `snapshot` messages. The first
//! connection holds the writer role and may send `cmd` messages; others are
//! read-only until it disconnects.
//!
//! ```no_run
//! use upsim_gateway::{serve, GatewayConfig, DEFAULT_PORT};
//!
//! let server = serve(("127.0.0.1", DEFAULT_PORT), GatewayConfig::default())?;
//! server.wait();
//! # Ok::<(), upsim_gateway::GatewayError>(())
//! ```

pub mod protocol;
mod server;
mod session;

pub use protocol::{Command, ErrorCode, ServerMessage, SessionInfo, Snapshot, Speed, DEFAULT_PORT};
pub use server::{serve, ServerHandle};
pub use session::{CommandQueue, GatewayConfig, DEFAULT_QUEUE_CAPACITY};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("gateway I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid gateway configuration: {0}")]
    Config(String),
}
