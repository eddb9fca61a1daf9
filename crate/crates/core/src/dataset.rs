//! Sliding-window supervised samples built from measurement traces.
//!
//! A sample at step `k` holds the `W` tuples `k-W+1 ..= k` of one node as
//! features and the signal quality at `k+1 ..= k+H` as targets. Features are
//! z-scored with statistics fitted on the training split only; targets use the
//! signal-quality statistics, so a normalized prediction can be fed back into
//! a signal-quality-only window unchanged.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::rng::substream;
use crate::sim::{fmt_f64, MeasurementTuple, Trace};
use crate::topology::{NodeId, NodeKind};
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Raw measurement columns, in storage order.
pub const RAW_FEATURES: [&str; 3] = ["rssi", "sq", "tp"];
const SQ: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// RSSI, signal quality and throughput.
    #[default]
    Full,
    /// Signal quality only; required for recursive forecasting.
    SinrOnly,
}

impl FeatureSet {
    pub fn width(self) -> usize {
        self.columns().len()
    }

    /// Indices into [`RAW_FEATURES`].
    pub fn columns(self) -> &'static [usize] {
        match self {
            FeatureSet::Full => &[0, 1, 2],
            FeatureSet::SinrOnly => &[SQ],
        }
    }

    /// Position of the signal-quality column within a feature row.
    pub fn sq_position(self) -> usize {
        match self {
            FeatureSet::Full => SQ,
            FeatureSet::SinrOnly => 0,
        }
    }

    fn extract(self, t: &MeasurementTuple) -> impl Iterator<Item = f64> + '_ {
        let raw = [t.rssi_dbm, t.sig_quality_db, t.throughput_bps];
        self.columns().iter().map(move |&c| raw[c])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub traj_id: usize,
    pub node: NodeId,
    /// Step of the newest feature row.
    pub k: usize,
    /// `W x F`, oldest row first.
    pub features: Array2<f64>,
    /// Signal quality at `k+1 ..= k+H`.
    pub targets: Vec<f64>,
}

impl WindowSample {
    pub fn window(&self) -> usize {
        self.features.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.targets.len()
    }
}

/// Per-raw-feature mean and standard deviation (`rssi`, `sq`, `tp`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormStats {
    /// Fits on the feature rows of `samples`. Columns absent from `set` get
    /// identity statistics.
    pub fn fit(samples: &[WindowSample], set: FeatureSet) -> Result<Self> {
        let mut stats = NormStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        let rows: usize = samples.iter().map(WindowSample::window).sum();
        if rows < 2 {
            return Err(Error::EmptyPool("not enough training rows to fit normalization".into()));
        }
        for (pos, &col) in set.columns().iter().enumerate() {
            let mut sum = 0.0;
            for s in samples {
                sum += s.features.column(pos).sum();
            }
            let mean = sum / rows as f64;
            let mut ss = 0.0;
            for s in samples {
                ss += s.features.column(pos).iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            }
            let std = (ss / rows as f64).sqrt();
            if !(std > 1e-12) {
                return Err(Error::DegenerateFeature(RAW_FEATURES[col].into()));
            }
            stats.mean[col] = mean;
            stats.std[col] = std;
        }
        Ok(stats)
    }

    pub fn normalize_value(&self, raw_col: usize, v: f64) -> f64 {
        (v - self.mean[raw_col]) / self.std[raw_col]
    }

    pub fn denormalize_value(&self, raw_col: usize, z: f64) -> f64 {
        z * self.std[raw_col] + self.mean[raw_col]
    }

    pub fn normalize_sq(&self, db: f64) -> f64 {
        self.normalize_value(SQ, db)
    }

    pub fn denormalize_sq(&self, z: f64) -> f64 {
        self.denormalize_value(SQ, z)
    }

    pub fn normalize(&self, s: &WindowSample, set: FeatureSet) -> WindowSample {
        let mut out = s.clone();
        for (pos, &col) in set.columns().iter().enumerate() {
            out.features
                .column_mut(pos)
                .mapv_inplace(|v| self.normalize_value(col, v));
        }
        out.targets.iter_mut().for_each(|t| *t = self.normalize_sq(*t));
        out
    }

    pub fn denormalize(&self, s: &WindowSample, set: FeatureSet) -> WindowSample {
        let mut out = s.clone();
        for (pos, &col) in set.columns().iter().enumerate() {
            out.features
                .column_mut(pos)
                .mapv_inplace(|v| self.denormalize_value(col, v));
        }
        out.targets.iter_mut().for_each(|t| *t = self.denormalize_sq(*t));
        out
    }

    /// Normalized feature row of one tuple.
    pub fn normalize_tuple(&self, t: &MeasurementTuple, set: FeatureSet) -> Vec<f64> {
        set.extract(t)
            .zip(set.columns())
            .map(|(v, &c)| self.normalize_value(c, v))
            .collect()
    }
}

/// Normalized train/test windows of one RAT kind.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub norm: NormStats,
    pub window: usize,
    pub horizon: usize,
    pub split_ratio: f64,
    pub feature_set: FeatureSet,
}

impl DatasetSplit {
    pub fn feature_width(&self) -> usize {
        self.feature_set.width()
    }

    /// Same windows with targets truncated to the first `horizon` steps.
    pub fn with_horizon(&self, horizon: usize) -> Result<DatasetSplit> {
        if horizon == 0 || horizon > self.horizon {
            return Err(Error::invalid(format!(
                "cannot truncate horizon {} to {horizon}",
                self.horizon
            )));
        }
        let cut = |v: &[WindowSample]| -> Vec<WindowSample> {
            v.iter()
                .map(|s| WindowSample {
                    targets: s.targets[..horizon].to_vec(),
                    ..s.clone()
                })
                .collect()
        };
        Ok(DatasetSplit {
            train: cut(&self.train),
            test: cut(&self.test),
            horizon,
            ..self.clone()
        })
    }
}

/// Raw (unnormalized) windows of one node: exactly `L - W - H + 1` samples.
pub fn make_windows(
    trace: &Trace,
    node: NodeId,
    window: usize,
    horizon: usize,
    set: FeatureSet,
) -> Result<Vec<WindowSample>> {
    if window == 0 || horizon == 0 {
        return Err(Error::invalid("W and H must be at least 1"));
    }
    let series = trace
        .node_series(node)
        .ok_or_else(|| Error::invalid(format!("{node} is not part of the trace")))?;
    windows_from_series(trace.traj_id, node, series, window, horizon, set)
}

pub(crate) fn windows_from_series(
    traj_id: usize,
    node: NodeId,
    series: &[MeasurementTuple],
    window: usize,
    horizon: usize,
    set: FeatureSet,
) -> Result<Vec<WindowSample>> {
    let len = series.len();
    if len < window + horizon {
        return Err(Error::TraceTooShort {
            len,
            required: window + horizon,
        });
    }
    let f = set.width();
    Ok((window - 1..len - horizon)
        .map(|k| {
            let rows = &series[k + 1 - window..=k];
            let features = Array2::from_shape_vec(
                (window, f),
                rows.iter().flat_map(|t| set.extract(t)).collect(),
            )
            .expect("window shape");
            let targets = series[k + 1..=k + horizon]
                .iter()
                .map(|t| t.sig_quality_db)
                .collect();
            WindowSample {
                traj_id,
                node,
                k,
                features,
                targets,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub w_bs: usize,
    pub w_ap: usize,
    pub horizon: usize,
    pub split_ratio: f64,
    pub feature_set: FeatureSet,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            w_bs: 9,
            w_ap: 7,
            horizon: 1,
            split_ratio: 0.8,
            feature_set: FeatureSet::Full,
        }
    }
}

/// Pools, shuffles, splits and normalizes the windows of every node of `kind`.
pub fn build_dataset(
    traces: &[Trace],
    kind: NodeKind,
    window: usize,
    horizon: usize,
    split_ratio: f64,
    set: FeatureSet,
    seed: u64,
    exec: Execution,
) -> Result<DatasetSplit> {
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::invalid("split_ratio must lie in (0, 1)"));
    }
    let jobs: Vec<(&Trace, NodeId)> = traces
        .iter()
        .flat_map(|t| t.nodes.iter().filter(|n| n.kind == kind).map(move |n| (t, *n)))
        .collect();
    let pooled: Vec<WindowSample> = exec
        .try_map(&jobs, |(t, n)| make_windows(t, *n, window, horizon, set))?
        .into_iter()
        .flatten()
        .collect();
    split_and_normalize(pooled, window, horizon, split_ratio, set, seed, kind.as_str())
}

pub(crate) fn split_and_normalize(
    mut pooled: Vec<WindowSample>,
    window: usize,
    horizon: usize,
    split_ratio: f64,
    set: FeatureSet,
    seed: u64,
    label: &str,
) -> Result<DatasetSplit> {
    if pooled.len() < 2 {
        return Err(Error::EmptyPool(format!("no {label} windows to split")));
    }
    let mut rng = substream(seed, "dataset-shuffle", &[window as u64, horizon as u64]);
    pooled.shuffle(&mut rng);
    let n_train = ((pooled.len() as f64 * split_ratio).round() as usize).clamp(1, pooled.len() - 1);
    let test_raw = pooled.split_off(n_train);
    let norm = NormStats::fit(&pooled, set)?;
    Ok(DatasetSplit {
        train: pooled.iter().map(|s| norm.normalize(s, set)).collect(),
        test: test_raw.iter().map(|s| norm.normalize(s, set)).collect(),
        norm,
        window,
        horizon,
        split_ratio,
        feature_set: set,
    })
}

/// BS and AP datasets from the same traces.
pub fn build_per_rat_datasets(
    traces: &[Trace],
    params: &DatasetParams,
    seed: u64,
    exec: Execution,
) -> Result<(DatasetSplit, DatasetSplit)> {
    let bs = build_dataset(
        traces,
        NodeKind::CellularBs,
        params.w_bs,
        params.horizon,
        params.split_ratio,
        params.feature_set,
        seed,
        exec,
    )?;
    let ap = build_dataset(
        traces,
        NodeKind::WifiAp,
        params.w_ap,
        params.horizon,
        params.split_ratio,
        params.feature_set,
        seed,
        exec,
    )?;
    Ok((bs, ap))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    window: usize,
    horizon: usize,
    split_ratio: f64,
    feature_set: FeatureSet,
    n_train: usize,
    n_test: usize,
    norm: NormStats,
}

pub fn manifest_path(csv_path: &Path) -> PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".manifest.toml");
    PathBuf::from(s)
}

fn feature_column(i: usize, raw_col: usize) -> String {
    format!("f{i}_{}", RAW_FEATURES[raw_col])
}

/// Writes train rows then test rows, plus a `<path>.manifest.toml` sidecar.
pub fn export_csv(split: &DatasetSplit, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header: Vec<String> = ["traj_id", "node_kind", "node_index", "k"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for i in 0..split.window {
        for &c in split.feature_set.columns() {
            header.push(feature_column(i, c));
        }
    }
    header.extend((1..=split.horizon).map(|t| format!("y_{t}")));
    w.write_record(&header)?;
    for s in split.train.iter().chain(&split.test) {
        let mut rec = vec![
            s.traj_id.to_string(),
            s.node.kind.as_str().to_string(),
            s.node.index.to_string(),
            s.k.to_string(),
        ];
        rec.extend(s.features.iter().map(|v| fmt_f64(*v)));
        rec.extend(s.targets.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        window: split.window,
        horizon: split.horizon,
        split_ratio: split.split_ratio,
        feature_set: split.feature_set,
        n_train: split.train.len(),
        n_test: split.test.len(),
        norm: split.norm.clone(),
    };
    let mp = manifest_path(path);
    std::fs::write(&mp, toml::to_string(&manifest)?).map_err(|e| Error::io(mp, e))
}

/// Reads a dataset written by [`export_csv`]. `W`, `F` and `H` are inferred
/// from the header and cross-checked against the sidecar manifest.
pub fn import_csv(path: &Path) -> Result<DatasetSplit> {
    let mp = manifest_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let manifest: DatasetManifest = toml::from_str(&text)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers = r.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let meta: Vec<usize> = ["traj_id", "node_kind", "node_index", "k"]
        .iter()
        .map(|c| find(c))
        .collect::<Result<_>>()?;

    let window = headers
        .iter()
        .filter_map(|h| h.strip_prefix('f')?.split_once('_')?.0.parse::<usize>().ok())
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| Error::Schema("no feature columns".into()))?;
    let set = if headers.iter().any(|h| h == "f0_rssi") {
        FeatureSet::Full
    } else {
        FeatureSet::SinrOnly
    };
    let horizon = headers
        .iter()
        .filter(|h| h.strip_prefix("y_").is_some_and(|t| t.parse::<usize>().is_ok()))
        .count();
    if horizon == 0 {
        return Err(Error::MissingColumn("y_1".into()));
    }
    let mut feat_idx = Vec::with_capacity(window * set.width());
    for i in 0..window {
        for &c in set.columns() {
            feat_idx.push(find(&feature_column(i, c))?);
        }
    }
    let target_idx: Vec<usize> = (1..=horizon)
        .map(|t| find(&format!("y_{t}")))
        .collect::<Result<_>>()?;
    if window != manifest.window || horizon != manifest.horizon || set != manifest.feature_set {
        return Err(Error::Schema(format!(
            "header implies W={window}, H={horizon}, {set:?}; manifest says W={}, H={}, {:?}",
            manifest.window, manifest.horizon, manifest.feature_set
        )));
    }

    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Schema(format!("bad number `{}`", &rec[i])))
        };
        let int = |i: usize| -> Result<usize> {
            rec[i]
                .parse()
                .map_err(|_| Error::Schema(format!("bad integer `{}`", &rec[i])))
        };
        let kind = NodeKind::parse(&rec[meta[1]])
            .ok_or_else(|| Error::Schema(format!("bad node kind `{}`", &rec[meta[1]])))?;
        let features: Vec<f64> = feat_idx.iter().map(|&i| num(i)).collect::<Result<_>>()?;
        samples.push(WindowSample {
            traj_id: int(meta[0])?,
            node: NodeId {
                kind,
                index: int(meta[2])?,
            },
            k: int(meta[3])?,
            features: Array2::from_shape_vec((window, set.width()), features)
                .map_err(|e| Error::Schema(e.to_string()))?,
            targets: target_idx.iter().map(|&i| num(i)).collect::<Result<_>>()?,
        });
    }
    if samples.len() != manifest.n_train + manifest.n_test {
        return Err(Error::Schema(format!(
            "{} rows, manifest expects {}",
            samples.len(),
            manifest.n_train + manifest.n_test
        )));
    }
    let test = samples.split_off(manifest.n_train);
    Ok(DatasetSplit {
        train: samples,
        test,
        norm: manifest.norm,
        window,
        horizon,
        split_ratio: manifest.split_ratio,
        feature_set: set,
    })
}
