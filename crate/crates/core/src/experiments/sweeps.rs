//! Window, training-set size, horizon and baseline sweeps.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::campaign::{campaign_dataset, Family, ModelKey};
use super::{argmin, write_rows, Assertion, Context, ExperimentId};
use crate::dataset::FeatureSet;
use crate::forecast::PredictorModel;
use crate::topology::NodeKind;
use crate::Result;

const RATS: [NodeKind; 2] = [NodeKind::CellularBs, NodeKind::WifiAp];

fn rat_window(ctx: &Context, rat: NodeKind) -> usize {
    match rat {
        NodeKind::CellularBs => ctx.cfg.model.w_bs,
        NodeKind::WifiAp => ctx.cfg.model.w_ap,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn model_rmse(m: &PredictorModel) -> f64 {
    mean(&m.manifest.test_rmse_db)
}

fn fmt_db(v: f64) -> String {
    format!("{v:.4}")
}

// ---------------------------------------------------------------- window

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRow {
    pub rat: &'static str,
    pub window: usize,
    pub n_traj: usize,
    pub rmse_db: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub rows: Vec<WindowRow>,
    pub assertions: Vec<Assertion>,
}

impl WindowResult {
    pub fn rmse(&self, rat: NodeKind, window: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.rat == rat.as_str() && r.window == window)
            .map(|r| r.rmse_db)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let p = dir.join("window_sweep.csv");
        write_rows(&p, &self.rows)?;
        Ok(vec![p])
    }
}

fn window_keys(ctx: &Context) -> Vec<(NodeKind, ModelKey)> {
    let ws = &ctx.cfg.window_sweep;
    let bs = ws.bs_windows.iter().map(|&w| (NodeKind::CellularBs, w));
    let ap = ws.ap_windows.iter().map(|&w| (NodeKind::WifiAp, w));
    bs.chain(ap)
        .map(|(rat, w)| (rat, ModelKey::new(rat, Family::Lstm, ws.n_traj, w, 1)))
        .collect()
}

pub(crate) fn window_models(ctx: &Context) -> Vec<ModelKey> {
    window_keys(ctx).into_iter().map(|(_, k)| k).collect()
}

pub fn exp_window(ctx: &mut Context) -> Result<WindowResult> {
    let keys = window_keys(ctx);
    ctx.ensure(&keys.iter().map(|(_, k)| *k).collect::<Vec<_>>())?;
    let mut rows = Vec::new();
    for (rat, key) in &keys {
        let m = ctx.cache.get(key)?;
        rows.push(WindowRow {
            rat: rat.as_str(),
            window: key.window,
            n_traj: key.n_traj,
            rmse_db: model_rmse(m),
            epochs_run: m.manifest.epochs_run,
        });
    }
    let mut assertions = Vec::new();
    for rat in RATS {
        let mut curve: Vec<(usize, f64)> = rows
            .iter()
            .filter(|r| r.rat == rat.as_str())
            .map(|r| (r.window, r.rmse_db))
            .collect();
        curve.sort_by_key(|c| c.0);
        let rmse: Vec<f64> = curve.iter().map(|c| c.1).collect();
        let Some(best) = argmin(&rmse) else { continue };
        let best_w = curve[best].0;
        let expected = rat_window(ctx, rat);
        let table: Vec<String> = curve.iter().map(|(w, r)| format!("W={w}:{}", fmt_db(*r))).collect();
        let table = table.join(" ");
        if curve.iter().any(|c| c.0 == expected) {
            assertions.push(Assertion::new(
                ExperimentId::Window,
                format!("{}_argmin_at_w{expected}", rat.as_str()),
                best_w == expected,
                format!("argmin W={best_w}; {table}"),
            ));
        }
        match rat {
            NodeKind::CellularBs => {
                let improving = rmse[..=best].windows(2).all(|p| p[1] <= p[0]);
                assertions.push(Assertion::new(
                    ExperimentId::Window,
                    "bs_monotone_to_argmin",
                    improving,
                    table,
                ));
            }
            NodeKind::WifiAp => {
                let last = *curve.last().unwrap();
                if let Some(at) = curve.iter().find(|c| c.0 == expected).filter(|c| c.0 < last.0) {
                    assertions.push(Assertion::new(
                        ExperimentId::Window,
                        format!("ap_rmse_w{}_above_w{}", last.0, at.0),
                        last.1 > at.1,
                        format!("{} vs {}", fmt_db(last.1), fmt_db(at.1)),
                    ));
                }
            }
        }
    }
    Ok(WindowResult { rows, assertions })
}

// ---------------------------------------------------------------- traj

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajRow {
    pub rat: &'static str,
    pub n_traj: usize,
    pub window: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rmse_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajResult {
    pub rows: Vec<TrajRow>,
    pub assertions: Vec<Assertion>,
}

impl TrajResult {
    pub fn rmse(&self, rat: NodeKind, n_traj: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.rat == rat.as_str() && r.n_traj == n_traj)
            .map(|r| r.rmse_db)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let p = dir.join("traj_sweep.csv");
        write_rows(&p, &self.rows)?;
        Ok(vec![p])
    }
}

pub(crate) fn traj_models(ctx: &Context) -> Vec<ModelKey> {
    RATS.iter()
        .flat_map(|&rat| {
            let w = rat_window(ctx, rat);
            ctx.cfg
                .traj_sweep
                .n_traj
                .iter()
                .map(move |&n| ModelKey::new(rat, Family::Lstm, n, w, 1))
        })
        .collect()
}

pub fn exp_traj(ctx: &mut Context) -> Result<TrajResult> {
    let keys = traj_models(ctx);
    ctx.ensure(&keys)?;
    let mut rows = Vec::new();
    for key in &keys {
        let m = ctx.cache.get(key)?;
        let split = campaign_dataset(&ctx.cfg, &ctx.campaign, key.rat, key.n_traj, key.window, 1, FeatureSet::Full, ctx.exec)?;
        rows.push(TrajRow {
            rat: key.rat.as_str(),
            n_traj: key.n_traj,
            window: key.window,
            n_train: split.train.len(),
            n_test: split.test.len(),
            rmse_db: model_rmse(m),
        });
    }
    let mut result = TrajResult {
        rows,
        assertions: Vec::new(),
    };
    let sizes = &ctx.cfg.traj_sweep.n_traj;
    let stable = ctx.cfg.traj_sweep.stable_n_traj;
    let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
    let mut out = Vec::new();
    if sizes.contains(&stable) {
        let at = |rat, n| result.rmse(rat, n).unwrap();
        if hi > stable {
            let (a, b) = (at(NodeKind::CellularBs, hi), at(NodeKind::CellularBs, stable));
            out.push(Assertion::new(
                ExperimentId::Traj,
                format!("bs_rmse_nt{hi}_above_nt{stable}"),
                a > b,
                format!("{} vs {}", fmt_db(a), fmt_db(b)),
            ));
        }
        if lo < stable {
            let (a, b) = (at(NodeKind::WifiAp, stable), at(NodeKind::WifiAp, lo));
            out.push(Assertion::new(
                ExperimentId::Traj,
                format!("ap_rmse_nt{stable}_below_nt{lo}"),
                a < b,
                format!("{} vs {}", fmt_db(a), fmt_db(b)),
            ));
        }
    }
    result.assertions = out;
    Ok(result)
}

// ---------------------------------------------------------------- horizon

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonRow {
    pub rat: &'static str,
    pub tau: usize,
    pub mode: &'static str,
    pub rmse_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonResult {
    pub rows: Vec<HorizonRow>,
    pub assertions: Vec<Assertion>,
}

impl HorizonResult {
    pub fn rmse(&self, rat: NodeKind, tau: usize, mode: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.rat == rat.as_str() && r.tau == tau && r.mode == mode)
            .map(|r| r.rmse_db)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let p = dir.join("horizon_sweep.csv");
        write_rows(&p, &self.rows)?;
        Ok(vec![p])
    }
}

/// Multi-output direct model on all features.
pub(crate) fn direct_key(ctx: &Context, rat: NodeKind) -> ModelKey {
    let h = &ctx.cfg.horizon_sweep;
    ModelKey::new(rat, Family::Lstm, h.n_traj, rat_window(ctx, rat), h.horizon)
}

/// One-step signal-quality-only model on the same windows as the direct one.
pub(crate) fn recursive_key(ctx: &Context, rat: NodeKind) -> ModelKey {
    ModelKey {
        horizon: 1,
        feature_set: FeatureSet::SinrOnly,
        ..direct_key(ctx, rat)
    }
}

pub(crate) fn horizon_models(ctx: &Context) -> Vec<ModelKey> {
    RATS.iter()
        .flat_map(|&r| [direct_key(ctx, r), recursive_key(ctx, r)])
        .collect()
}

/// Non-decreasing up to a single step down of at most `slack` (relative).
fn near_monotone(v: &[f64], slack: f64) -> bool {
    let drops: Vec<f64> = v.windows(2).filter(|p| p[1] < p[0]).map(|p| (p[0] - p[1]) / p[0]).collect();
    drops.len() <= 1 && drops.iter().all(|d| *d <= slack)
}

pub fn exp_horizon(ctx: &mut Context) -> Result<HorizonResult> {
    ctx.ensure(&horizon_models(ctx))?;
    let horizon = ctx.cfg.horizon_sweep.horizon;
    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    for rat in RATS {
        let (dk, rk) = (direct_key(ctx, rat), recursive_key(ctx, rat));
        let direct = ctx.cache.get(&dk)?;
        let one_step = ctx.cache.get(&rk)?;
        let test = campaign_dataset(&ctx.cfg, &ctx.campaign, rat, rk.n_traj, rk.window, horizon, FeatureSet::SinrOnly, ctx.exec)?.test;
        let d = &direct.manifest.test_rmse_db;
        let r = one_step.evaluate_rmse_recursive(&test, horizon, ctx.exec)?;
        let r1_direct = one_step.evaluate_rmse(&test, ctx.exec)?[0];
        for tau in 1..=horizon {
            rows.push(HorizonRow {
                rat: rat.as_str(),
                tau,
                mode: "direct",
                rmse_db: d[tau - 1],
            });
            rows.push(HorizonRow {
                rat: rat.as_str(),
                tau,
                mode: "recursive",
                rmse_db: r[tau - 1],
            });
        }
        let name = rat.as_str();
        assertions.push(Assertion::new(
            ExperimentId::Horizon,
            format!("{name}_recursive_tau1_is_one_step_model"),
            (r[0] - r1_direct).abs() <= 1e-9,
            format!("{:e}", (r[0] - r1_direct).abs()),
        ));
        for tau in [2, 4].into_iter().filter(|t| *t <= horizon) {
            assertions.push(Assertion::new(
                ExperimentId::Horizon,
                format!("{name}_direct_below_recursive_tau{tau}"),
                d[tau - 1] < r[tau - 1],
                format!("{} vs {}", fmt_db(d[tau - 1]), fmt_db(r[tau - 1])),
            ));
        }
        if rat == NodeKind::CellularBs && horizon >= 4 {
            let ratio = r[3] / d[3];
            assertions.push(Assertion::new(
                ExperimentId::Horizon,
                "bs_recursive_over_direct_tau4_above_1.5",
                ratio > 1.5,
                format!("ratio {ratio:.4}"),
            ));
        }
        let curve: Vec<String> = d.iter().map(|v| fmt_db(*v)).collect();
        assertions.push(Assertion::new(
            ExperimentId::Horizon,
            format!("{name}_direct_rmse_grows_with_tau"),
            near_monotone(d, 0.05),
            curve.join(" "),
        ));
    }
    Ok(HorizonResult { rows, assertions })
}

// ---------------------------------------------------------------- baselines

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineRow {
    pub rat: &'static str,
    pub model: &'static str,
    pub n_traj: usize,
    pub rmse_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub rows: Vec<BaselineRow>,
    pub assertions: Vec<Assertion>,
}

impl BaselineResult {
    pub fn rmse(&self, rat: NodeKind, family: Family, n_traj: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.rat == rat.as_str() && r.model == family.as_str() && r.n_traj == n_traj)
            .map(|r| r.rmse_db)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let p = dir.join("baselines.csv");
        write_rows(&p, &self.rows)?;
        Ok(vec![p])
    }
}

const FAMILIES: [Family; 3] = [Family::Lstm, Family::Ar, Family::Gbt];

pub(crate) fn baseline_models(ctx: &Context) -> Vec<ModelKey> {
    let mut keys = Vec::new();
    for rat in RATS {
        for &n in &ctx.cfg.baselines.n_traj {
            for f in FAMILIES {
                keys.push(ModelKey::new(rat, f, n, rat_window(ctx, rat), 1));
            }
        }
    }
    keys
}

pub fn exp_baselines(ctx: &mut Context) -> Result<BaselineResult> {
    let keys = baseline_models(ctx);
    ctx.ensure(&keys)?;
    let mut rows = Vec::new();
    for key in &keys {
        rows.push(BaselineRow {
            rat: key.rat.as_str(),
            model: key.family.as_str(),
            n_traj: key.n_traj,
            rmse_db: model_rmse(ctx.cache.get(key)?),
        });
    }
    let mut result = BaselineResult {
        rows,
        assertions: Vec::new(),
    };
    let sizes = &ctx.cfg.baselines.n_traj;
    let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
    let cell = |rat, n| -> Vec<(Family, f64)> { FAMILIES.iter().map(|&f| (f, result.rmse(rat, f, n).unwrap())).collect() };
    let show = |c: &[(Family, f64)]| c.iter().map(|(f, v)| format!("{}={}", f.as_str(), fmt_db(*v))).collect::<Vec<_>>().join(" ");
    let mut out = Vec::new();
    for rat in RATS {
        for &n in sizes {
            let c = cell(rat, n);
            let ar = c.iter().find(|x| x.0 == Family::Ar).unwrap().1;
            out.push(Assertion::new(
                ExperimentId::Baselines,
                format!("{}_nt{n}_ar_worst", rat.as_str()),
                c.iter().all(|(f, v)| *f == Family::Ar || *v < ar),
                show(&c),
            ));
        }
        let c = cell(rat, hi);
        let lstm = c[0].1;
        out.push(Assertion::new(
            ExperimentId::Baselines,
            format!("{}_nt{hi}_lstm_best", rat.as_str()),
            c.iter().skip(1).all(|(_, v)| lstm < *v),
            show(&c),
        ));
        if hi > lo {
            for f in FAMILIES {
                let (a, b) = (result.rmse(rat, f, hi).unwrap(), result.rmse(rat, f, lo).unwrap());
                out.push(Assertion::new(
                    ExperimentId::Baselines,
                    format!("{}_{}_nt{hi}_above_nt{lo}", rat.as_str(), f.as_str()),
                    a > b,
                    format!("{} vs {}", fmt_db(a), fmt_db(b)),
                ));
            }
        }
    }
    let (g, l) = (
        result.rmse(NodeKind::WifiAp, Family::Gbt, lo).unwrap(),
        result.rmse(NodeKind::WifiAp, Family::Lstm, lo).unwrap(),
    );
    out.push(Assertion::new(
        ExperimentId::Baselines,
        format!("ap_nt{lo}_gbt_below_lstm"),
        g < l,
        format!("{} vs {}", fmt_db(g), fmt_db(l)),
    ));
    result.assertions = out;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::near_monotone;

    #[test]
    fn near_monotone_allows_one_small_dip() {
        assert!(near_monotone(&[1.0, 2.0, 3.0], 0.05));
        assert!(near_monotone(&[1.0, 2.0, 1.95, 3.0], 0.05));
        assert!(!near_monotone(&[1.0, 2.0, 1.8, 3.0], 0.05));
        assert!(!near_monotone(&[1.0, 0.99, 2.0, 1.99], 0.05));
        assert!(near_monotone(&[], 0.05));
    }
}
