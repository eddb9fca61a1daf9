//! Runs a selection of experiments and writes their tables, the assertion
//! summary and a plain-text manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::campaign::{campaign_dataset, ModelKey};
use super::config::{ExperimentConfig, CONFIG_FORMAT_VERSION};
use super::handover::{exp_handover, handover_models, HandoverResult};
use super::sweeps::{
    baseline_models, exp_baselines, exp_horizon, exp_traj, exp_window, horizon_models, traj_models, window_models,
    BaselineResult, HorizonResult, TrajResult, WindowResult,
};
use super::{write_rows, Assertion, Context, ExperimentId};
use crate::dataset::{FeatureSet, DATASET_FORMAT_VERSION};
use crate::exec::Execution;
use crate::forecast::model::{grid_search, CHECKPOINT_FORMAT_VERSION};
use crate::forecast::PredictorKind;
use crate::mobility::{write_trajectories_csv, SCENARIO_FORMAT_VERSION};
use crate::sim::write_traces_csv;
use crate::topology::NodeKind;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub rat: &'static str,
    pub hidden: usize,
    pub learning_rate: f64,
    pub rmse_db: f64,
    pub best: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub config_hash: String,
    pub window: Option<WindowResult>,
    pub traj: Option<TrajResult>,
    pub horizon: Option<HorizonResult>,
    pub baselines: Option<BaselineResult>,
    pub handover: Option<HandoverResult>,
    pub grid: Vec<GridRow>,
    pub assertions: Vec<Assertion>,
    pub files: Vec<PathBuf>,
    /// Wall-clock seconds per stage, in run order.
    pub timings: Vec<(String, f64)>,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Assertion> {
        self.assertions.iter().filter(|a| !a.passed)
    }
}

fn timed<T>(timings: &mut Vec<(String, f64)>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    let out = f()?;
    let secs = t0.elapsed().as_secs_f64();
    log::info!("{stage}: {secs:.1} s");
    timings.push((stage.to_string(), secs));
    Ok(out)
}

fn write_campaign(ctx: &Context, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for (name, kind) in [("traces_bs.csv", NodeKind::CellularBs), ("traces_ap.csv", NodeKind::WifiAp)] {
        let p = dir.join(name);
        let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        write_traces_csv(std::io::BufWriter::new(f), &ctx.campaign.traces, kind)?;
        files.push(p);
    }
    let p = dir.join("trajectories.csv");
    let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    write_trajectories_csv(std::io::BufWriter::new(f), &ctx.campaign.trajectories)?;
    files.push(p);
    Ok(files)
}

fn run_grid(ctx: &Context) -> Result<Vec<GridRow>> {
    let g = &ctx.cfg.grid;
    let mut rows = Vec::new();
    for (rat, kind, w) in [
        (NodeKind::CellularBs, PredictorKind::BiLstmBs, ctx.cfg.model.w_bs),
        (NodeKind::WifiAp, PredictorKind::LiteLstmAp, ctx.cfg.model.w_ap),
    ] {
        let split = campaign_dataset(&ctx.cfg, &ctx.campaign, rat, g.n_traj, w, 1, FeatureSet::Full, ctx.exec)?;
        let (points, best) = grid_search(kind, &split, &ctx.cfg.model.arch, &g.hidden, &g.learning_rates, &ctx.cfg.model.train, ctx.exec)?;
        rows.extend(points.iter().enumerate().map(|(i, p)| GridRow {
            rat: rat.as_str(),
            hidden: p.hidden,
            learning_rate: p.learning_rate,
            rmse_db: p.test_rmse_db,
            best: i == best,
        }));
    }
    Ok(rows)
}

/// Grid winners that differ from the shipped hidden size or learning rate.
fn grid_changes(cfg: &ExperimentConfig, rows: &[GridRow]) -> Vec<String> {
    rows.iter()
        .filter(|r| r.best)
        .filter_map(|r| {
            let hidden = if r.rat == "bs" { cfg.model.arch.bs_hidden } else { cfg.model.arch.ap_hidden };
            (r.hidden != hidden || r.learning_rate != cfg.model.train.learning_rate).then(|| {
                format!(
                    "{}: grid best hidden={} lr={} differs from shipped hidden={} lr={}",
                    r.rat, r.hidden, r.learning_rate, hidden, cfg.model.train.learning_rate
                )
            })
        })
        .collect()
}

/// Runs `ids` in a fixed order and writes every output into `out`. CSV
/// contents depend only on the configuration; timings go to the manifest.
pub fn run_experiments(cfg: &ExperimentConfig, ids: &[ExperimentId], out: &Path, exec: Execution) -> Result<RunReport> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let started = Instant::now();
    let mut report = RunReport {
        config_hash: cfg.hash()?,
        ..RunReport::default()
    };
    let mut timings = Vec::new();
    let mut ctx = timed(&mut timings, "campaign", || Context::new(cfg.clone(), exec))?;
    report.files.extend(write_campaign(&ctx, out)?);
    let config_path = out.join("config.toml");
    cfg.save(&config_path)?;
    report.files.push(config_path);

    let mut ids = ids.to_vec();
    ids.sort();
    ids.dedup();
    let keys: Vec<ModelKey> = ids
        .iter()
        .flat_map(|id| match id {
            ExperimentId::Window => window_models(&ctx),
            ExperimentId::Traj => traj_models(&ctx),
            ExperimentId::Horizon => horizon_models(&ctx),
            ExperimentId::Baselines => baseline_models(&ctx),
            ExperimentId::Handover => handover_models(&ctx),
        })
        .collect();
    timed(&mut timings, "training", || ctx.ensure(&keys))?;

    for id in &ids {
        let stage = id.as_str();
        match id {
            ExperimentId::Window => {
                let r = timed(&mut timings, stage, || exp_window(&mut ctx))?;
                report.files.extend(r.write(out)?);
                report.assertions.extend(r.assertions.iter().cloned());
                report.window = Some(r);
                if ctx.cfg.grid.enabled {
                    let rows = timed(&mut timings, "grid", || run_grid(&ctx))?;
                    let p = out.join("grid_search.csv");
                    write_rows(&p, &rows)?;
                    report.files.push(p);
                    report.grid = rows;
                }
            }
            ExperimentId::Traj => {
                let r = timed(&mut timings, stage, || exp_traj(&mut ctx))?;
                report.files.extend(r.write(out)?);
                report.assertions.extend(r.assertions.iter().cloned());
                report.traj = Some(r);
            }
            ExperimentId::Horizon => {
                let r = timed(&mut timings, stage, || exp_horizon(&mut ctx))?;
                report.files.extend(r.write(out)?);
                report.assertions.extend(r.assertions.iter().cloned());
                report.horizon = Some(r);
            }
            ExperimentId::Baselines => {
                let r = timed(&mut timings, stage, || exp_baselines(&mut ctx))?;
                report.files.extend(r.write(out)?);
                report.assertions.extend(r.assertions.iter().cloned());
                report.baselines = Some(r);
            }
            ExperimentId::Handover => {
                let r = timed(&mut timings, stage, || exp_handover(&mut ctx))?;
                report.files.extend(r.write(out)?);
                report.assertions.extend(r.assertions.iter().cloned());
                report.handover = Some(r);
            }
        }
    }
    let p = out.join("assertions.csv");
    write_rows(&p, &report.assertions)?;
    report.files.push(p);
    timings.push(("total".into(), started.elapsed().as_secs_f64()));
    report.timings = timings;
    let p = out.join("manifest.txt");
    std::fs::write(&p, manifest(&ctx, &ids, &report, exec)?).map_err(|e| Error::io(&p, e))?;
    report.files.push(p);
    Ok(report)
}

fn manifest(ctx: &Context, ids: &[ExperimentId], report: &RunReport, exec: Execution) -> Result<String> {
    let cfg = &ctx.cfg;
    let mut m = String::new();
    let threads = if exec.is_parallel() { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { 1 };
    let _ = writeln!(m, "# run manifest");
    let _ = writeln!(m, "crate_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(m, "config_format_version = {CONFIG_FORMAT_VERSION}");
    let _ = writeln!(m, "dataset_format_version = {DATASET_FORMAT_VERSION}");
    let _ = writeln!(m, "checkpoint_format_version = {CHECKPOINT_FORMAT_VERSION}");
    let _ = writeln!(m, "scenario_format_version = {SCENARIO_FORMAT_VERSION}");
    let _ = writeln!(m, "config_hash = {}", report.config_hash);
    let _ = writeln!(m, "seed = {}", cfg.seed);
    let _ = writeln!(m, "train_seed = {}", cfg.model.train.seed);
    let _ = writeln!(m, "scale = {:?}", cfg.scale);
    let _ = writeln!(m, "execution = {exec:?} ({threads} threads)");
    let ids: Vec<&str> = ids.iter().map(|i| i.as_str()).collect();
    let _ = writeln!(m, "experiments = {}", ids.join(","));
    let _ = writeln!(m, "campaign_trajectories = {}", ctx.campaign.len());
    let lens: Vec<usize> = ctx.campaign.traces.iter().map(|t| t.len()).collect();
    let _ = writeln!(m, "campaign_steps = {}", lens.iter().sum::<usize>());
    if let Some(h) = &report.handover {
        let _ = writeln!(m, "held_out_trajectory = {} ({})", h.held_out, h.held_out_note);
    }
    let _ = writeln!(m, "\n[wall_clock_seconds]");
    for (stage, secs) in &report.timings {
        let _ = writeln!(m, "{stage} = {secs:.2}");
    }
    let _ = writeln!(m, "\n[models]");
    for key in ctx.cache.keys() {
        let model = ctx.cache.get(key)?;
        let man = &model.manifest;
        let rmse: Vec<String> = man.test_rmse_db.iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(
            m,
            "{key} = kind {} epochs {} best_epoch {} data {} test_rmse_db [{}]",
            model.kind.as_str(),
            man.epochs_run,
            man.best_epoch.map_or("-".into(), |e| e.to_string()),
            &man.data_hash[..16],
            rmse.join(", ")
        );
    }
    if cfg.grid.enabled && !report.grid.is_empty() {
        let _ = writeln!(m, "\n[grid]");
        let changes = grid_changes(cfg, &report.grid);
        let _ = writeln!(m, "argmin_flag = {}", !changes.is_empty());
        for c in changes {
            let _ = writeln!(m, "{c}");
        }
    }
    let passed = report.assertions.iter().filter(|a| a.passed).count();
    let _ = writeln!(m, "\n[assertions]");
    let _ = writeln!(m, "passed = {passed}/{}", report.assertions.len());
    for a in &report.assertions {
        let verdict = if a.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(m, "{verdict} {}.{}: {}", a.experiment, a.name, a.detail);
    }
    let _ = writeln!(m, "\n[config]");
    m.push_str(&cfg.to_toml()?);
    Ok(m)
}
