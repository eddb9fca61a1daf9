//! Experiment configuration: every tunable value behind the reproduction
//! runs, serialized as TOML and hash-stamped into outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::forecast::gbt::GbtConfig;
use crate::forecast::{ArchConfig, TrainConfig};
use crate::mobility::TrajectoryParams;
use crate::sim::RadioConfig;
use crate::topology::TopologyParams;
use crate::{Error, Result};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Short trajectories and few epochs.
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub w_bs: usize,
    pub w_ap: usize,
    pub split_ratio: f64,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub gbt: GbtConfig,
    /// Differencing order of the AR baseline; its order is the longest the
    /// window supports.
    pub ar_difference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    pub enabled: bool,
    pub n_traj: usize,
    pub hidden: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSweep {
    pub n_traj: usize,
    pub bs_windows: Vec<usize>,
    pub ap_windows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajSweep {
    pub n_traj: Vec<usize>,
    /// Size up to which the error is expected to stay flat (BS) or keep
    /// falling (AP).
    pub stable_n_traj: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSweep {
    pub n_traj: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSweep {
    pub n_traj: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverSweep {
    /// Training trajectories; the held-out path is drawn from the ids after
    /// them.
    pub n_traj: usize,
    /// Candidate held-out ids scanned after the training set.
    pub held_out_pool: usize,
    pub deltas_db: Vec<f64>,
    pub hysteresis_n: Vec<usize>,
    /// Threshold and hysteresis length of the logged timelines.
    pub plot_delta_db: f64,
    pub plot_n: usize,
    pub ping_pong_window: usize,
    pub admission_capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub seed: u64,
    pub scale: Scale,
    pub topology: TopologyParams,
    pub trajectory: TrajectoryParams,
    pub radio: RadioConfig,
    pub model: ModelSettings,
    pub grid: GridSettings,
    pub window_sweep: WindowSweep,
    pub traj_sweep: TrajSweep,
    pub horizon_sweep: HorizonSweep,
    pub baselines: BaselineSweep,
    pub handover: HandoverSweep,
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        ExperimentConfig {
            format_version: CONFIG_FORMAT_VERSION,
            seed: 7,
            scale: Scale::Desk,
            topology: TopologyParams::default(),
            trajectory: TrajectoryParams {
                n_waypoints: 3,
                ..TrajectoryParams::default()
            },
            radio: RadioConfig::default(),
            model: ModelSettings {
                w_bs: 9,
                w_ap: 7,
                split_ratio: 0.8,
                arch: ArchConfig::default(),
                train: TrainConfig {
                    epochs: 30,
                    patience: Some(5),
                    seed: 7,
                    ..TrainConfig::default()
                },
                gbt: GbtConfig::default(),
                ar_difference: 1,
            },
            grid: GridSettings {
                enabled: false,
                n_traj: 20,
                hidden: vec![16, 32, 64],
                learning_rates: vec![1e-2, 1e-3],
            },
            window_sweep: WindowSweep {
                n_traj: 35,
                bs_windows: vec![3, 5, 7, 9, 11],
                ap_windows: vec![3, 5, 7, 9, 11],
            },
            traj_sweep: TrajSweep {
                n_traj: vec![5, 15, 25, 35],
                stable_n_traj: 15,
            },
            horizon_sweep: HorizonSweep { n_traj: 20, horizon: 5 },
            baselines: BaselineSweep { n_traj: vec![17, 35] },
            handover: HandoverSweep {
                n_traj: 20,
                held_out_pool: 15,
                deltas_db: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
                hysteresis_n: vec![2, 3],
                plot_delta_db: 2.5,
                plot_n: 3,
                ping_pong_window: crate::steering::episode::DEFAULT_PING_PONG_WINDOW,
                admission_capacity: crate::steering::handover::DEFAULT_ADMISSION_CAPACITY,
            },
        }
    }

    pub fn full() -> Self {
        let mut c = Self::desk();
        c.scale = Scale::Full;
        c.trajectory = TrajectoryParams::default();
        c.model.train.epochs = 100;
        c.model.train.patience = Some(10);
        c.grid.enabled = true;
        c
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.model.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: CONFIG_FORMAT_VERSION,
            });
        }
        let nonempty = [
            ("window_sweep.bs_windows", self.window_sweep.bs_windows.is_empty()),
            ("window_sweep.ap_windows", self.window_sweep.ap_windows.is_empty()),
            ("traj_sweep.n_traj", self.traj_sweep.n_traj.is_empty()),
            ("baselines.n_traj", self.baselines.n_traj.is_empty()),
            ("handover.deltas_db", self.handover.deltas_db.is_empty()),
            ("handover.hysteresis_n", self.handover.hysteresis_n.is_empty()),
        ];
        if let Some((name, _)) = nonempty.iter().find(|(_, empty)| *empty) {
            return Err(Error::invalid(format!("{name} must not be empty")));
        }
        let windows = self.window_sweep.bs_windows.iter().chain(&self.window_sweep.ap_windows);
        if windows.chain([&self.model.w_bs, &self.model.w_ap]).any(|w| !(1..=15).contains(w)) {
            return Err(Error::invalid("windows must lie in 1..=15"));
        }
        let counts = self.traj_sweep.n_traj.iter().chain(&self.baselines.n_traj);
        if counts
            .chain([&self.window_sweep.n_traj, &self.horizon_sweep.n_traj, &self.handover.n_traj])
            .any(|n| *n == 0)
        {
            return Err(Error::invalid("trajectory counts must be positive"));
        }
        if self.horizon_sweep.horizon == 0 || self.handover.hysteresis_n.iter().chain([&self.handover.plot_n]).any(|n| *n > self.horizon_sweep.horizon || *n == 0) {
            return Err(Error::invalid("hysteresis lengths must lie in 1..=horizon"));
        }
        if self.handover.held_out_pool == 0 {
            return Err(Error::invalid("held-out pool must be positive"));
        }
        if self.handover.deltas_db.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::invalid("thresholds must be non-negative"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text)?;
        let found = value.get("format_version").and_then(|v| v.as_integer()).unwrap_or(0) as u32;
        if found != CONFIG_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found,
                expected: CONFIG_FORMAT_VERSION,
            });
        }
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Trajectories a full run needs.
    pub fn max_trajectories(&self) -> usize {
        let sweeps = self.traj_sweep.n_traj.iter().chain(&self.baselines.n_traj).copied();
        sweeps
            .chain([
                self.window_sweep.n_traj,
                self.horizon_sweep.n_traj,
                self.grid.n_traj,
                self.handover.n_traj + self.handover.held_out_pool,
            ])
            .max()
            .unwrap_or(1)
    }
}
