//! Deterministic simulator of a microcontroller-supervised PC UPS.
//!
//! * [`plant`]: analogue power path (transformer, rectifier, regulators,
//!   battery, inverter, fuse) plus waveform synthesis.
//! * [`controller`]: the firmware control loop, pass for pass.
//! * [`hostagent`]: the PC-side port decoder and 60 s shutdown protocol.
//! * [`scenario`]: scripted runs and CSV traces.
//! * [`sweep`]: batch runs and runtime sweeps, parallel when the `parallel`
//!   feature is enabled.

pub mod controller;
pub mod hostagent;
pub mod plant;
pub mod scenario;
pub mod sweep;
