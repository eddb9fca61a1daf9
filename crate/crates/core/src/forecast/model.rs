//! Forecasting models over normalized windows, their inference modes and
//! checkpoints.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ar::{fit_ar, ArModel};
use super::gbt::{fit_gbt, GbtConfig, GbtModel};
use super::network::{batch_inputs, Activation, BiLstmParams, Dense, LstmParams, Network, Recurrent};
use super::train::{train_network, Batchable, LossHistory, TrainConfig};
use crate::dataset::{DatasetSplit, FeatureSet, NormStats, WindowSample};
use crate::exec::Execution;
use crate::rng::substream;
use crate::topology::NodeId;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
/// Windows per batched inference call.
const PREDICT_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    BiLstmBs,
    LiteLstmAp,
    ArBaseline,
    GbtBaseline,
}

impl PredictorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictorKind::BiLstmBs => "bilstm_bs",
            PredictorKind::LiteLstmAp => "lite_lstm_ap",
            PredictorKind::ArBaseline => "ar",
            PredictorKind::GbtBaseline => "gbt",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, PredictorKind::BiLstmBs | PredictorKind::LiteLstmAp)
    }
}

/// Layer sizes of the neural kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub bs_hidden: usize,
    pub bs_layers: usize,
    pub ap_hidden: usize,
    /// Hidden dense widths of the BS head.
    pub dense_units: Vec<usize>,
    pub dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            bs_hidden: 32,
            bs_layers: 2,
            ap_hidden: 16,
            dense_units: vec![32, 16],
            dropout: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelBody {
    Neural(Network),
    Ar(ArModel),
    Gbt(GbtModel),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    /// SHA-256 of the training and test windows.
    pub data_hash: String,
    /// Per-step test RMSE in dB at the end of training.
    pub test_rmse_db: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    Direct,
    Recursive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub node: NodeId,
    pub k: usize,
    /// Signal quality in dB at `k+1 ..= k+len`.
    pub values: Vec<f64>,
    pub mode: ForecastMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub kind: PredictorKind,
    pub window: usize,
    pub horizon: usize,
    pub feature_set: FeatureSet,
    pub norm: NormStats,
    pub body: ModelBody,
    pub train_config: Option<TrainConfig>,
    pub trained: bool,
    pub manifest: TrainingManifest,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: PredictorModel,
}

/// SHA-256 over the shapes and exact values of every window in `split`.
pub fn hash_split(split: &DatasetSplit) -> String {
    let mut h = Sha256::new();
    for v in [split.window, split.horizon, split.feature_width(), split.train.len(), split.test.len()] {
        h.update((v as u64).to_le_bytes());
    }
    for s in split.train.iter().chain(&split.test) {
        for v in s.features.iter().chain(&s.targets) {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn supervised(samples: &[WindowSample]) -> Batchable<'_> {
    let h = samples.first().map_or(0, |s| s.targets.len());
    Batchable {
        windows: samples.iter().map(|s| s.features.view()).collect(),
        targets: Array2::from_shape_fn((samples.len(), h), |(r, c)| samples[r].targets[c]),
    }
}

fn flatten(windows: &[ArrayView2<f64>]) -> Array2<f64> {
    let d = windows.first().map_or(0, |w| w.len());
    Array2::from_shape_fn((windows.len(), d), |(r, c)| {
        let w = &windows[r];
        w[[c / w.ncols(), c % w.ncols()]]
    })
}

/// Root mean squared error per column.
pub fn rmse_per_step(pred: &Array2<f64>, target: &Array2<f64>) -> Vec<f64> {
    let n = pred.nrows().max(1) as f64;
    (0..pred.ncols())
        .map(|c| {
            let ss: f64 = pred.column(c).iter().zip(target.column(c)).map(|(p, t)| (p - t).powi(2)).sum();
            (ss / n).sqrt()
        })
        .collect()
}

impl PredictorModel {
    fn untrained(kind: PredictorKind, window: usize, horizon: usize, feature_set: FeatureSet, norm: NormStats, body: ModelBody) -> Self {
        PredictorModel {
            kind,
            window,
            horizon,
            feature_set,
            norm,
            body,
            train_config: None,
            trained: false,
            manifest: TrainingManifest::default(),
        }
    }

    /// Two stacked bidirectional LSTM layers feeding a ReLU dense stack with
    /// dropout and a linear `horizon`-wide output.
    pub fn new_bilstm_bs(window: usize, horizon: usize, set: FeatureSet, norm: NormStats, arch: &ArchConfig, seed: u64) -> Result<Self> {
        if arch.bs_layers == 0 || arch.dense_units.len() < 2 || window == 0 || horizon == 0 {
            return Err(Error::invalid("BiLSTM needs recurrent layers, two dense layers, W and H >= 1"));
        }
        let mut rng = substream(seed, "init", &[0]);
        let f = set.width();
        let hd = arch.bs_hidden;
        let layers = (0..arch.bs_layers)
            .map(|l| {
                let input = if l == 0 { f } else { 2 * hd };
                BiLstmParams {
                    forward: LstmParams::init(input, hd, &mut rng),
                    backward: LstmParams::init(input, hd, &mut rng),
                }
            })
            .collect();
        let mut head = Vec::new();
        let mut width = 2 * hd;
        for &u in &arch.dense_units {
            head.push(Dense::init(width, u, Activation::Relu, &mut rng));
            width = u;
        }
        head.push(Dense::init(width, horizon, Activation::Identity, &mut rng));
        let net = Network {
            window,
            input_dim: f,
            recurrent: Recurrent::Bidirectional(layers),
            head,
            dropout: arch.dropout,
        };
        Ok(Self::untrained(PredictorKind::BiLstmBs, window, horizon, set, norm, ModelBody::Neural(net)))
    }

    /// One LSTM layer feeding one linear dense layer.
    pub fn new_lite_lstm_ap(window: usize, horizon: usize, set: FeatureSet, norm: NormStats, arch: &ArchConfig, seed: u64) -> Result<Self> {
        if window == 0 || horizon == 0 {
            return Err(Error::invalid("W and H must be at least 1"));
        }
        let mut rng = substream(seed, "init", &[1]);
        let f = set.width();
        let lstm = LstmParams::init(f, arch.ap_hidden, &mut rng);
        let net = Network {
            window,
            input_dim: f,
            recurrent: Recurrent::Unidirectional(vec![lstm]),
            head: vec![Dense::init(arch.ap_hidden, horizon, Activation::Identity, &mut rng)],
            dropout: 0.0,
        };
        Ok(Self::untrained(PredictorKind::LiteLstmAp, window, horizon, set, norm, ModelBody::Neural(net)))
    }

    /// Untrained neural model shaped for `split`.
    pub fn neural_for(kind: PredictorKind, split: &DatasetSplit, arch: &ArchConfig, seed: u64) -> Result<Self> {
        let norm = split.norm.clone();
        match kind {
            PredictorKind::BiLstmBs => Self::new_bilstm_bs(split.window, split.horizon, split.feature_set, norm, arch, seed),
            PredictorKind::LiteLstmAp => Self::new_lite_lstm_ap(split.window, split.horizon, split.feature_set, norm, arch, seed),
            _ => Err(Error::invalid(format!("{} is not a neural kind", kind.as_str()))),
        }
    }

    pub fn network(&self) -> Option<&Network> {
        match &self.body {
            ModelBody::Neural(n) => Some(n),
            _ => None,
        }
    }

    fn check_split(&self, split: &DatasetSplit) -> Result<()> {
        if split.window != self.window || split.horizon != self.horizon || split.feature_set != self.feature_set {
            return Err(Error::ShapeMismatch(format!(
                "model is W={} H={} {:?}, dataset is W={} H={} {:?}",
                self.window, self.horizon, self.feature_set, split.window, split.horizon, split.feature_set
            )));
        }
        if split.train.is_empty() {
            return Err(Error::EmptyPool("empty training split".into()));
        }
        Ok(())
    }

    fn finish_training(&mut self, split: &DatasetSplit, seed: u64, history: Option<&LossHistory>) -> Result<()> {
        self.trained = true;
        self.manifest = TrainingManifest {
            seed,
            epochs_run: history.map_or(0, |h| h.train.len()),
            best_epoch: history.and_then(|h| h.best_epoch),
            data_hash: hash_split(split),
            test_rmse_db: Vec::new(),
        };
        if !split.test.is_empty() {
            self.manifest.test_rmse_db = self.evaluate_rmse(&split.test, Execution::Sequential)?;
        }
        Ok(())
    }

    /// Trains a neural model on the normalized split with MSE loss.
    pub fn train(&mut self, split: &DatasetSplit, cfg: &TrainConfig) -> Result<LossHistory> {
        self.check_split(split)?;
        let ModelBody::Neural(net) = &mut self.body else {
            return Err(Error::invalid("only neural models are trained by gradient descent"));
        };
        let history = train_network(net, &supervised(&split.train), &supervised(&split.test), cfg)?;
        self.train_config = Some(cfg.clone());
        self.finish_training(split, cfg.seed, Some(&history))?;
        Ok(history)
    }

    /// Least-squares AR(`order`) on the signal-quality series of the training
    /// windows (features followed by targets), differenced `difference` times.
    pub fn fit_ar_baseline(split: &DatasetSplit, order: usize, difference: usize) -> Result<Self> {
        let sq = split.feature_set.sq_position();
        let series: Vec<Vec<f64>> = split
            .train
            .iter()
            .map(|s| {
                s.features
                    .column(sq)
                    .iter()
                    .chain(&s.targets)
                    .map(|&z| split.norm.denormalize_sq(z))
                    .collect()
            })
            .collect();
        let ar = fit_ar(&series, order, difference)?;
        if ar.min_history() > split.window {
            return Err(Error::invalid(format!(
                "AR({order}, {difference}) needs {} past values, windows hold {}",
                ar.min_history(),
                split.window
            )));
        }
        let mut m = Self::untrained(
            PredictorKind::ArBaseline,
            split.window,
            split.horizon,
            split.feature_set,
            split.norm.clone(),
            ModelBody::Ar(ar),
        );
        m.finish_training(split, 0, None)?;
        Ok(m)
    }

    /// Boosted trees on flattened normalized windows.
    pub fn fit_gbt_baseline(split: &DatasetSplit, cfg: &GbtConfig, exec: Execution) -> Result<Self> {
        if split.train.is_empty() {
            return Err(Error::EmptyPool("empty training split".into()));
        }
        let data = supervised(&split.train);
        let x = flatten(&data.windows);
        let gbt = fit_gbt(x.view(), data.targets.view(), cfg, exec)?;
        let mut m = Self::untrained(
            PredictorKind::GbtBaseline,
            split.window,
            split.horizon,
            split.feature_set,
            split.norm.clone(),
            ModelBody::Gbt(gbt),
        );
        m.finish_training(split, 0, None)?;
        Ok(m)
    }

    fn check_windows(&self, windows: &[ArrayView2<f64>]) -> Result<()> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        for w in windows {
            if w.nrows() != self.window || w.ncols() != self.feature_set.width() {
                return Err(Error::ShapeMismatch(format!(
                    "window is {}x{}, model expects {}x{}",
                    w.nrows(),
                    w.ncols(),
                    self.window,
                    self.feature_set.width()
                )));
            }
        }
        Ok(())
    }

    /// Normalized outputs `(n, H)` for one chunk of windows.
    fn predict_normalized(&self, windows: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
        Ok(match &self.body {
            ModelBody::Neural(net) => net.predict(&batch_inputs(windows.iter().cloned(), self.window, net.input_dim)),
            ModelBody::Gbt(g) => g.predict(flatten(windows).view()),
            ModelBody::Ar(ar) => {
                let sq = self.feature_set.sq_position();
                let mut out = Array2::zeros((windows.len(), self.horizon));
                for (r, w) in windows.iter().enumerate() {
                    let hist: Vec<f64> = w.column(sq).iter().map(|&z| self.norm.denormalize_sq(z)).collect();
                    for (c, v) in ar.forecast(&hist, self.horizon)?.into_iter().enumerate() {
                        out[[r, c]] = self.norm.normalize_sq(v);
                    }
                }
                out
            }
        })
    }

    fn chunked<F>(&self, windows: &[ArrayView2<f64>], cols: usize, exec: Execution, f: F) -> Result<Array2<f64>>
    where
        F: Fn(&[ArrayView2<f64>]) -> Result<Array2<f64>> + Sync,
    {
        self.check_windows(windows)?;
        let chunks: Vec<&[ArrayView2<f64>]> = windows.chunks(PREDICT_CHUNK).collect();
        let parts = exec.try_map(&chunks, |c| f(c))?;
        let mut out = Array2::zeros((windows.len(), cols));
        let mut row = 0;
        for p in parts {
            let n = p.nrows();
            out.slice_mut(ndarray::s![row..row + n, ..]).assign(&p);
            row += n;
        }
        Ok(out)
    }

    /// All `H` horizon values of every window in one pass, in dB.
    pub fn predict_direct_batch(&self, windows: &[ArrayView2<f64>], exec: Execution) -> Result<Array2<f64>> {
        self.chunked(windows, self.horizon, exec, |c| {
            Ok(self.predict_normalized(c)?.mapv(|z| self.norm.denormalize_sq(z)))
        })
    }

    /// `tau` one-step predictions fed back into each window, in dB.
    pub fn predict_recursive_batch(&self, windows: &[ArrayView2<f64>], tau: usize, exec: Execution) -> Result<Array2<f64>> {
        if self.feature_set.width() != 1 {
            return Err(Error::invalid("recursive forecasting needs a signal-quality-only model"));
        }
        if tau == 0 {
            return Err(Error::invalid("tau must be at least 1"));
        }
        self.chunked(windows, tau, exec, |c| {
            let mut cur: Vec<Array2<f64>> = c.iter().map(|w| w.to_owned()).collect();
            let mut out = Array2::zeros((c.len(), tau));
            for step in 0..tau {
                let views: Vec<_> = cur.iter().map(|w| w.view()).collect();
                let next = self.predict_normalized(&views)?;
                for (r, w) in cur.iter_mut().enumerate() {
                    let z = next[[r, 0]];
                    out[[r, step]] = self.norm.denormalize_sq(z);
                    let flat = w.as_slice_mut().expect("owned window");
                    flat.rotate_left(1);
                    *flat.last_mut().unwrap() = z;
                }
            }
            Ok(out)
        })
    }

    /// Direct forecast of one normalized window.
    pub fn predict_direct(&self, node: NodeId, k: usize, window: ArrayView2<f64>) -> Result<ForecastResult> {
        let p = self.predict_direct_batch(&[window], Execution::Sequential)?;
        Ok(ForecastResult {
            node,
            k,
            values: p.row(0).to_vec(),
            mode: ForecastMode::Direct,
        })
    }

    /// Recursive forecast of one normalized window.
    pub fn predict_recursive(&self, node: NodeId, k: usize, window: ArrayView2<f64>, tau: usize) -> Result<ForecastResult> {
        let p = self.predict_recursive_batch(&[window], tau, Execution::Sequential)?;
        Ok(ForecastResult {
            node,
            k,
            values: p.row(0).to_vec(),
            mode: ForecastMode::Recursive,
        })
    }

    fn targets_db(&self, samples: &[WindowSample], cols: usize) -> Result<Array2<f64>> {
        if samples.is_empty() {
            return Err(Error::EmptyPool("no samples to evaluate".into()));
        }
        if samples.iter().any(|s| s.targets.len() < cols) {
            return Err(Error::ShapeMismatch("samples have fewer targets than predicted steps".into()));
        }
        Ok(Array2::from_shape_fn((samples.len(), cols), |(r, c)| {
            self.norm.denormalize_sq(samples[r].targets[c])
        }))
    }

    /// Per-step dB RMSE of direct predictions on normalized samples.
    pub fn evaluate_rmse(&self, samples: &[WindowSample], exec: Execution) -> Result<Vec<f64>> {
        let target = self.targets_db(samples, self.horizon)?;
        let windows: Vec<_> = samples.iter().map(|s| s.features.view()).collect();
        Ok(rmse_per_step(&self.predict_direct_batch(&windows, exec)?, &target))
    }

    /// Per-step dB RMSE of `tau`-step recursive predictions.
    pub fn evaluate_rmse_recursive(&self, samples: &[WindowSample], tau: usize, exec: Execution) -> Result<Vec<f64>> {
        let target = self.targets_db(samples, tau)?;
        let windows: Vec<_> = samples.iter().map(|s| s.features.view()).collect();
        Ok(rmse_per_step(&self.predict_recursive_batch(&windows, tau, exec)?, &target))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: self.clone(),
        };
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), &ck)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(value)?;
        Ok(ck.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hidden: usize,
    pub learning_rate: f64,
    /// Mean over steps of the test RMSE in dB.
    pub test_rmse_db: f64,
}

/// Trains one neural model per `(hidden, learning rate)` pair, in parallel
/// across pairs, and returns every point with the index of the best.
pub fn grid_search(
    kind: PredictorKind,
    split: &DatasetSplit,
    arch: &ArchConfig,
    hidden: &[usize],
    learning_rates: &[f64],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<(Vec<GridPoint>, usize)> {
    let pairs: Vec<(usize, f64)> = hidden
        .iter()
        .flat_map(|&h| learning_rates.iter().map(move |&lr| (h, lr)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let points = exec.try_map(&pairs, |&(h, lr)| {
        let mut a = arch.clone();
        a.bs_hidden = h;
        a.ap_hidden = h;
        let mut m = PredictorModel::neural_for(kind, split, &a, cfg.seed)?;
        m.train(
            split,
            &TrainConfig {
                learning_rate: lr,
                ..cfg.clone()
            },
        )?;
        let r = &m.manifest.test_rmse_db;
        Ok::<_, Error>(GridPoint {
            hidden: h,
            learning_rate: lr,
            test_rmse_db: r.iter().sum::<f64>() / r.len().max(1) as f64,
        })
    })?;
    let best = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.test_rmse_db.total_cmp(&b.1.test_rmse_db))
        .map(|(i, _)| i)
        .unwrap();
    Ok((points, best))
}
