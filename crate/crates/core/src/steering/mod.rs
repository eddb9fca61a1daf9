//! Predictive handover steering: measurement storage, forecast-conditioned
//! triggers and simulated handover execution.

pub mod episode;
pub mod handover;
pub mod store;
pub mod trigger;

pub use episode::{run_episode, write_decisions_csv, write_events_csv, Episode, EpisodeConfig, EpisodeMetrics};
pub use handover::{execute_handover, AdmissionControl, HandoverEvent, HandoverState};
pub use store::{Assembled, MeasurementStore};
pub use trigger::{decide, Action, RatPredictors, SteeringDecision, TriggerConfig, TriggerMode};
