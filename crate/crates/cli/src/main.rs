use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pcho_core::dataset::{export_csv, import_csv, FeatureSet};
use pcho_core::experiments::campaign::{campaign_dataset, train_model, Campaign, Family, ModelKey};
use pcho_core::experiments::{run_experiments, ExperimentConfig, ExperimentId, RunReport};
use pcho_core::forecast::model::hash_split;
use pcho_core::forecast::PredictorModel;
use pcho_core::mobility::{write_trajectories_csv, ScenarioFile};
use pcho_core::sim::write_traces_csv;
use pcho_core::{Execution, NodeKind};

/// Stored and recomputed test RMSE must agree this closely.
const EVAL_TOLERANCE_DB: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "pcho", version, about = "Multi-RAT mobility simulator and predictive handover experiments")]
struct Cli {
    /// TOML experiment configuration; defaults to the desk-scale preset.
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "full")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,
    /// Full-scale trajectories, epochs and hyperparameter grid.
    #[arg(long, global = true)]
    full: bool,
    /// Runs every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rat {
    Bs,
    Ap,
}

impl From<Rat> for NodeKind {
    fn from(r: Rat) -> Self {
        match r {
            Rat::Bs => NodeKind::CellularBs,
            Rat::Ap => NodeKind::WifiAp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Lstm,
    Gbt,
    Ar,
}

#[derive(Clone, Copy, ValueEnum)]
enum Features {
    Full,
    Sinr,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_enum, default_value = "bs")]
    rat: Rat,
    /// Number of trajectories; defaults to the window sweep's.
    #[arg(long)]
    n_traj: Option<usize>,
    /// Lookback window; defaults to the configured one for the RAT.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long, value_enum, default_value = "full")]
    features: Features,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the topology and trajectory set.
    Topology {
        #[arg(long)]
        n_traj: Option<usize>,
    },
    /// Simulates the campaign and writes BS and AP trace CSVs.
    Simulate {
        #[arg(long)]
        n_traj: Option<usize>,
    },
    /// Builds one windowed dataset and exports it with its sidecar manifest.
    Dataset(DataArgs),
    /// Trains one model and writes a checkpoint next to its dataset.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "lstm")]
        model: ModelArg,
    },
    /// Re-evaluates a checkpoint on its exported dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// RMSE against lookback window for each RAT
    ExpWindow,
    /// RMSE against the number of training trajectories
    ExpTraj,
    /// Direct multi-step forecasts against recursive one-step rollouts
    ExpHorizon,
    /// LSTM, gradient-boosted trees and AR side by side
    ExpBaselines,
    /// Handover counts and timeline for soft and hysteresis triggers
    ExpHandover,
    /// Every experiment, the assertion summary and the manifest.
    RunAll,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None if cli.full => ExperimentConfig::full(),
        None => ExperimentConfig::desk(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

fn write_manifest(out: &Path, command: &str, cfg: &ExperimentConfig, lines: &[String]) -> Result<()> {
    let mut m = String::new();
    writeln!(m, "# {command} manifest")?;
    writeln!(m, "crate_version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(m, "config_hash = {}", cfg.hash()?)?;
    writeln!(m, "seed = {}", cfg.seed)?;
    for l in lines {
        writeln!(m, "{l}")?;
    }
    writeln!(m, "\n[config]")?;
    m.push_str(&cfg.to_toml()?);
    std::fs::write(out.join("manifest.txt"), m)?;
    Ok(())
}

fn key_for(cfg: &ExperimentConfig, d: &DataArgs, family: Family) -> ModelKey {
    let rat = NodeKind::from(d.rat);
    let window = d.window.unwrap_or(match rat {
        NodeKind::CellularBs => cfg.model.w_bs,
        NodeKind::WifiAp => cfg.model.w_ap,
    });
    let mut key = ModelKey::new(rat, family, d.n_traj.unwrap_or(cfg.window_sweep.n_traj), window, d.horizon);
    key.feature_set = match d.features {
        Features::Full => FeatureSet::Full,
        Features::Sinr => FeatureSet::SinrOnly,
    };
    key
}

fn report_assertions(report: &RunReport) -> bool {
    for a in &report.assertions {
        let verdict = if a.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {}.{}: {}", a.experiment, a.name, a.detail);
    }
    let passed = report.assertions.iter().filter(|a| a.passed).count();
    println!("{passed}/{} assertions passed", report.assertions.len());
    report.all_passed()
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    cfg.validate()?;
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let out = cli.out.as_path();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let experiments = |ids: &[ExperimentId]| -> Result<bool> {
        let report = run_experiments(&cfg, ids, out, exec)?;
        Ok(report_assertions(&report))
    };
    match &cli.command {
        Command::Topology { n_traj } => {
            let n = n_traj.unwrap_or(cfg.max_trajectories());
            let c = Campaign::build(&cfg, n, exec)?;
            ScenarioFile::new(c.topology.clone(), c.trajectories.clone()).save(&out.join("scenario.toml"))?;
            write_trajectories_csv(create(&out.join("trajectories.csv"))?, &c.trajectories)?;
            let steps: usize = c.trajectories.iter().map(|t| t.len()).sum();
            write_manifest(out, "topology", &cfg, &[format!("trajectories = {n}"), format!("steps = {steps}")])?;
            println!("{n} trajectories, {steps} steps");
        }
        Command::Simulate { n_traj } => {
            let n = n_traj.unwrap_or(cfg.max_trajectories());
            let c = Campaign::build(&cfg, n, exec)?;
            write_traces_csv(create(&out.join("traces_bs.csv"))?, &c.traces, NodeKind::CellularBs)?;
            write_traces_csv(create(&out.join("traces_ap.csv"))?, &c.traces, NodeKind::WifiAp)?;
            write_manifest(out, "simulate", &cfg, &[format!("trajectories = {n}")])?;
            println!("simulated {n} trajectories");
        }
        Command::Dataset(d) => {
            let key = key_for(&cfg, d, Family::Lstm);
            let c = Campaign::build(&cfg, key.n_traj, exec)?;
            let split = campaign_dataset(&cfg, &c, key.rat, key.n_traj, key.window, key.horizon, key.feature_set, exec)?;
            let path = out.join(format!("dataset_{}.csv", key.rat.as_str()));
            export_csv(&split, &path)?;
            write_manifest(
                out,
                "dataset",
                &cfg,
                &[
                    format!("dataset = {}", path.display()),
                    format!("train = {}", split.train.len()),
                    format!("test = {}", split.test.len()),
                    format!("data_hash = {}", hash_split(&split)),
                ],
            )?;
            println!("{} train / {} test windows", split.train.len(), split.test.len());
        }
        Command::Train { data, model } => {
            let family = match model {
                ModelArg::Lstm => Family::Lstm,
                ModelArg::Gbt => Family::Gbt,
                ModelArg::Ar => Family::Ar,
            };
            let key = key_for(&cfg, data, family);
            let c = Campaign::build(&cfg, key.n_traj, exec)?;
            let m = train_model(&cfg, &c, &key, exec)?;
            let split = campaign_dataset(&cfg, &c, key.rat, key.n_traj, key.window, key.horizon, key.feature_set, exec)?;
            let ds = out.join(format!("dataset_{key}.csv"));
            let ck = out.join(format!("model_{key}.json"));
            export_csv(&split, &ds)?;
            m.save_checkpoint(&ck)?;
            let rmse: Vec<String> = m.manifest.test_rmse_db.iter().map(|v| format!("{v:.6}")).collect();
            write_manifest(
                out,
                "train",
                &cfg,
                &[
                    format!("model = {key}"),
                    format!("checkpoint = {}", ck.display()),
                    format!("dataset = {}", ds.display()),
                    format!("epochs_run = {}", m.manifest.epochs_run),
                    format!("test_rmse_db = [{}]", rmse.join(", ")),
                ],
            )?;
            println!("{key}: test RMSE [{}] dB", rmse.join(", "));
        }
        Command::Eval { checkpoint, dataset } => {
            let m = PredictorModel::load_checkpoint(checkpoint)?;
            let split = import_csv(dataset)?;
            let stored = &m.manifest.test_rmse_db;
            if stored.is_empty() {
                bail!("checkpoint holds no test RMSE");
            }
            let now = m.evaluate_rmse(&split.test, exec)?;
            let hash_ok = hash_split(&split) == m.manifest.data_hash;
            let mut rows = csv::Writer::from_path(out.join("eval.csv"))?;
            rows.write_record(["tau", "stored_rmse_db", "recomputed_rmse_db", "abs_diff"])?;
            let mut rmse_ok = stored.len() == now.len();
            for (i, (s, r)) in stored.iter().zip(&now).enumerate() {
                rmse_ok &= (s - r).abs() <= EVAL_TOLERANCE_DB;
                rows.write_record(&[(i + 1).to_string(), s.to_string(), r.to_string(), (s - r).abs().to_string()])?;
            }
            rows.flush()?;
            let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
            println!("{} data hash matches checkpoint", verdict(hash_ok));
            println!("{} test RMSE reproduced within {EVAL_TOLERANCE_DB:e} dB", verdict(rmse_ok));
            write_manifest(
                out,
                "eval",
                &cfg,
                &[
                    format!("checkpoint = {}", checkpoint.display()),
                    format!("dataset = {}", dataset.display()),
                    format!("data_hash_match = {hash_ok}"),
                    format!("rmse_reproduced = {rmse_ok}"),
                ],
            )?;
            return Ok(hash_ok && rmse_ok);
        }
        Command::ExpWindow => return experiments(&[ExperimentId::Window]),
        Command::ExpTraj => return experiments(&[ExperimentId::Traj]),
        Command::ExpHorizon => return experiments(&[ExperimentId::Horizon]),
        Command::ExpBaselines => return experiments(&[ExperimentId::Baselines]),
        Command::ExpHandover => return experiments(&[ExperimentId::Handover]),
        Command::RunAll => return experiments(&ExperimentId::ALL),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
