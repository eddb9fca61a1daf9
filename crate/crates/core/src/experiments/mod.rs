//! Reproduction sweeps: window length, training-set size, horizon, baselines
//! and handover triggers, each emitting CSV tables and trend assertions.

pub mod campaign;
pub mod config;
pub mod handover;
pub mod run;
pub mod sweeps;

use std::path::Path;

use serde::Serialize;

pub use campaign::{Campaign, Family, ModelCache, ModelKey};
pub use config::{ExperimentConfig, Scale, CONFIG_FORMAT_VERSION};
pub use handover::{exp_handover, HandoverResult};
pub use run::{run_experiments, RunReport};
pub use sweeps::{exp_baselines, exp_horizon, exp_traj, exp_window, BaselineResult, HorizonResult, TrajResult, WindowResult};

use crate::exec::Execution;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentId {
    Window,
    Traj,
    Horizon,
    Baselines,
    Handover,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::Window,
        ExperimentId::Traj,
        ExperimentId::Horizon,
        ExperimentId::Baselines,
        ExperimentId::Handover,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Window => "window",
            ExperimentId::Traj => "traj",
            ExperimentId::Horizon => "horizon",
            ExperimentId::Baselines => "baselines",
            ExperimentId::Handover => "handover",
        }
    }
}

/// One evaluated trend check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub experiment: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(experiment: ExperimentId, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Assertion {
            experiment: experiment.as_str().into(),
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Everything an experiment needs: configuration, the simulated campaign and
/// trained models.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub campaign: Campaign,
    pub cache: ModelCache,
    pub exec: Execution,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        let campaign = Campaign::build(&cfg, cfg.max_trajectories(), exec)?;
        Ok(Context {
            cfg,
            campaign,
            cache: ModelCache::new(),
            exec,
        })
    }

    pub fn ensure(&mut self, keys: &[ModelKey]) -> Result<()> {
        self.cache.ensure(&self.cfg, &self.campaign, keys, self.exec)
    }
}

pub(crate) fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Index of the smallest value; the first one on ties.
pub(crate) fn argmin(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}
