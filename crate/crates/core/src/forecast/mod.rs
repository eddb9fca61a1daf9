//! Signal-quality forecasters and their training.

pub mod ar;
pub mod gbt;
pub mod gradcheck;
pub mod model;
pub mod network;
pub mod train;

pub use model::{ArchConfig, ForecastMode, ForecastResult, PredictorKind, PredictorModel};
pub use train::{LossHistory, TrainConfig};
