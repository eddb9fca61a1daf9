//! Shared simulation campaign and the trained-model cache behind every sweep.

use std::collections::HashMap;
use std::fmt;

use super::config::ExperimentConfig;
use crate::dataset::{build_dataset, DatasetSplit, FeatureSet};
use crate::exec::Execution;
use crate::forecast::{PredictorKind, PredictorModel};
use crate::mobility::{generate_trajectory_set, Trajectory};
use crate::sim::{simulate_campaign, Trace};
use crate::topology::{build_topology, NetworkTopology, NodeKind};
use crate::{Error, Result};

/// Topology plus trajectories `0..n` and their traces. Trajectory `i` does not
/// depend on `n`, so any prefix is the campaign of a smaller `N_T`.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub topology: NetworkTopology,
    pub trajectories: Vec<Trajectory>,
    pub traces: Vec<Trace>,
}

impl Campaign {
    pub fn build(cfg: &ExperimentConfig, n_traj: usize, exec: Execution) -> Result<Self> {
        let topology = build_topology(&cfg.topology, cfg.seed)?;
        let trajectories = generate_trajectory_set(&topology, n_traj, &cfg.trajectory, cfg.seed)?;
        let traces = simulate_campaign(&topology, &trajectories, &cfg.radio, cfg.seed, exec)?;
        Ok(Campaign {
            topology,
            trajectories,
            traces,
        })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn traces(&self, n_traj: usize) -> Result<&[Trace]> {
        self.traces.get(..n_traj).ok_or_else(|| {
            Error::invalid(format!("campaign holds {} trajectories, {n_traj} requested", self.len()))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Lstm,
    Gbt,
    Ar,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Lstm => "lstm",
            Family::Gbt => "gbt",
            Family::Ar => "ar",
        }
    }
}

/// Identifies one trained model. `data_horizon` is the horizon the windows
/// were cut with; `horizon` may be shorter, in which case targets are
/// truncated so the model sees exactly the same windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelKey {
    pub rat: NodeKind,
    pub family: Family,
    pub n_traj: usize,
    pub window: usize,
    pub data_horizon: usize,
    pub horizon: usize,
    pub feature_set: FeatureSet,
}

impl ModelKey {
    pub fn new(rat: NodeKind, family: Family, n_traj: usize, window: usize, horizon: usize) -> Self {
        ModelKey {
            rat,
            family,
            n_traj,
            window,
            data_horizon: horizon,
            horizon,
            feature_set: FeatureSet::Full,
        }
    }

    pub fn kind(&self) -> PredictorKind {
        match (self.family, self.rat) {
            (Family::Lstm, NodeKind::CellularBs) => PredictorKind::BiLstmBs,
            (Family::Lstm, NodeKind::WifiAp) => PredictorKind::LiteLstmAp,
            (Family::Gbt, _) => PredictorKind::GbtBaseline,
            (Family::Ar, _) => PredictorKind::ArBaseline,
        }
    }
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let set = match self.feature_set {
            FeatureSet::Full => "full",
            FeatureSet::SinrOnly => "sinr",
        };
        write!(
            f,
            "{}_{}_nt{}_w{}_h{}",
            self.rat.as_str(),
            self.family.as_str(),
            self.n_traj,
            self.window,
            self.horizon
        )?;
        if self.data_horizon != self.horizon {
            write!(f, "of{}", self.data_horizon)?;
        }
        write!(f, "_{set}")
    }
}

/// Windows of `rat` from the first `n_traj` traces, cut with `(window, horizon)`.
pub fn campaign_dataset(
    cfg: &ExperimentConfig,
    campaign: &Campaign,
    rat: NodeKind,
    n_traj: usize,
    window: usize,
    horizon: usize,
    set: FeatureSet,
    exec: Execution,
) -> Result<DatasetSplit> {
    build_dataset(
        campaign.traces(n_traj)?,
        rat,
        window,
        horizon,
        cfg.model.split_ratio,
        set,
        cfg.seed,
        exec,
    )
}

/// AR order that fits the window: `W - d` differences are available.
pub fn ar_order(window: usize, difference: usize) -> usize {
    window.saturating_sub(difference).max(1)
}

/// Fits the model `key` describes on its campaign slice.
pub fn train_model(cfg: &ExperimentConfig, campaign: &Campaign, key: &ModelKey, exec: Execution) -> Result<PredictorModel> {
    let data = campaign_dataset(cfg, campaign, key.rat, key.n_traj, key.window, key.data_horizon, key.feature_set, exec)?;
    let split = if key.horizon == key.data_horizon {
        data
    } else {
        data.with_horizon(key.horizon)?
    };
    let model = match key.family {
        Family::Lstm => {
            let mut m = PredictorModel::neural_for(key.kind(), &split, &cfg.model.arch, cfg.model.train.seed)?;
            m.train(&split, &cfg.model.train)?;
            m
        }
        Family::Gbt => PredictorModel::fit_gbt_baseline(&split, &cfg.model.gbt, exec)?,
        Family::Ar => {
            let d = cfg.model.ar_difference;
            PredictorModel::fit_ar_baseline(&split, ar_order(key.window, d), d)?
        }
    };
    log::info!("trained {key}: test rmse {:?}", model.manifest.test_rmse_db);
    Ok(model)
}

/// Trained models shared between experiments.
#[derive(Debug, Default, Clone)]
pub struct ModelCache {
    models: HashMap<ModelKey, PredictorModel>,
    order: Vec<ModelKey>,
}

impl ModelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Trains every missing key, distinct models in parallel.
    pub fn ensure(&mut self, cfg: &ExperimentConfig, campaign: &Campaign, keys: &[ModelKey], exec: Execution) -> Result<()> {
        let mut missing: Vec<ModelKey> = Vec::new();
        for k in keys {
            if !self.models.contains_key(k) && !missing.contains(k) {
                missing.push(*k);
            }
        }
        let trained = exec.try_map(&missing, |k| train_model(cfg, campaign, k, exec))?;
        for (k, m) in missing.into_iter().zip(trained) {
            self.models.insert(k, m);
            self.order.push(k);
        }
        Ok(())
    }

    pub fn get(&self, key: &ModelKey) -> Result<&PredictorModel> {
        self.models
            .get(key)
            .ok_or_else(|| Error::invalid(format!("model {key} has not been trained")))
    }

    /// Keys in training order.
    pub fn keys(&self) -> &[ModelKey] {
        &self.order
    }
}
