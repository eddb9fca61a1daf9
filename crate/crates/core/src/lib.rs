//! Multi-RAT (cellular + WiFi) mobility simulator and predictive conditional
//! handover (P-CHO) engine.
//!
//! The pipeline runs bottom-up:
//!
//! * [`topology`] and [`mobility`] describe where the transmitters are and how
//!   UEs move between them.
//! * [`channel`] holds the link models (path loss, Rician fading, SINR/SNR).
//! * [`sim`] walks UEs along trajectories and emits aligned measurement traces.
//! * [`dataset`] windows traces into supervised samples.
//! * [`forecast`] trains recurrent predictors and the AR/GBT baselines.
//! * [`steering`] turns forecasts into handover decisions and executes them.
//! * [`experiments`] reproduces the evaluation sweeps and writes CSV outputs.
//!
//! Data-parallel loops go through [`exec::Execution`]; with the `parallel`
//! feature disabled every loop runs sequentially and produces bit-identical
//! results.

pub mod channel;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod forecast;
pub mod mobility;
pub mod rng;
pub mod sim;
pub mod steering;
pub mod topology;

pub use error::{Error, Result};
pub use exec::Execution;
pub use topology::{NetworkTopology, NodeId, NodeKind};
