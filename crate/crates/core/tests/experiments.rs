use std::collections::BTreeMap;
use std::path::Path;

use pcho_core::experiments::handover::pick_held_out;
use pcho_core::experiments::{run_experiments, Campaign, ExperimentConfig, ExperimentId};
use pcho_core::forecast::gbt::GbtConfig;
use pcho_core::Execution;

/// Seconds-scale configuration exercising every experiment.
fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.trajectory.n_waypoints = 2;
    c.model.train.epochs = 1;
    c.model.arch.bs_hidden = 4;
    c.model.arch.ap_hidden = 4;
    c.model.arch.dense_units = vec![4, 4];
    c.model.gbt = GbtConfig {
        n_trees: 3,
        ..GbtConfig::default()
    };
    c.window_sweep.n_traj = 4;
    c.window_sweep.bs_windows = vec![3, 9];
    c.window_sweep.ap_windows = vec![7, 11];
    c.traj_sweep.n_traj = vec![2, 3];
    c.traj_sweep.stable_n_traj = 3;
    c.horizon_sweep.n_traj = 3;
    c.baselines.n_traj = vec![2, 4];
    c.handover.n_traj = 3;
    c.handover.held_out_pool = 3;
    c.handover.deltas_db = vec![0.0, 1.5, 3.0];
    c
}

fn csvs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn run_writes_every_table_and_is_reproducible_across_execution_modes() {
    let cfg = tiny();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_experiments(&cfg, &ExperimentId::ALL, a.path(), Execution::Parallel).unwrap();
    let second = run_experiments(&cfg, &ExperimentId::ALL, b.path(), Execution::Sequential).unwrap();

    let files = csvs(a.path());
    for name in [
        "window_sweep.csv",
        "traj_sweep.csv",
        "horizon_sweep.csv",
        "baselines.csv",
        "handover_counts.csv",
        "handover_timeline.csv",
        "decisions_soft.csv",
        "decisions_hysteresis.csv",
        "events_soft.csv",
        "events_hysteresis.csv",
        "assertions.csv",
        "traces_bs.csv",
        "traces_ap.csv",
        "trajectories.csv",
    ] {
        assert!(files.contains_key(name), "missing {name}");
    }
    assert_eq!(files, csvs(b.path()));
    assert_eq!(first.assertions, second.assertions);

    let baselines = String::from_utf8(files["baselines.csv"].clone()).unwrap();
    assert_eq!(baselines.lines().count(), 1 + 12);
    assert_eq!(baselines.lines().next().unwrap(), "rat,model,n_traj,rmse_db");
    let counts = String::from_utf8(files["handover_counts.csv"].clone()).unwrap();
    // soft plus N in {2, 3} at three thresholds
    assert_eq!(counts.lines().count(), 1 + 9);
    let horizon = first.horizon.as_ref().unwrap();
    assert_eq!(horizon.rows.len(), 2 * 2 * 5);

    let manifest = std::fs::read_to_string(a.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains(&format!("config_hash = {}", cfg.hash().unwrap())));
    for key in ["ping_pong_window", "admission_capacity", "noise_density_dbm_hz", "learning_rate", "rician_k_db"] {
        assert!(manifest.contains(key), "manifest lacks {key}");
    }
    let assertions = String::from_utf8(files["assertions.csv"].clone()).unwrap();
    assert_eq!(assertions.lines().count(), 1 + first.assertions.len());
    let reloaded = ExperimentConfig::load(&a.path().join("config.toml")).unwrap();
    assert_eq!(reloaded, cfg);
}

#[test]
fn always_true_checks_pass_even_on_tiny_runs() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let r = run_experiments(&cfg, &[ExperimentId::Horizon, ExperimentId::Handover], dir.path(), Execution::Parallel).unwrap();
    assert!(r.window.is_none() && r.baselines.is_none());
    let by_name = |n: &str| r.assertions.iter().find(|a| a.name == n).unwrap().passed;
    assert!(by_name("bs_recursive_tau1_is_one_step_model"));
    assert!(by_name("ap_recursive_tau1_is_one_step_model"));
    assert!(by_name("hysteresis_n1_equals_soft"));
    let h = r.handover.unwrap();
    assert!((cfg.handover.n_traj..cfg.handover.n_traj + cfg.handover.held_out_pool).contains(&h.held_out));
    for e in h.soft.events.iter().chain(&h.hysteresis.events) {
        assert!(e.is_well_ordered());
    }
}

#[test]
fn single_window_sweep_gives_one_row_per_rat() {
    let mut cfg = tiny();
    cfg.window_sweep.bs_windows = vec![5];
    cfg.window_sweep.ap_windows = vec![5];
    let dir = tempfile::tempdir().unwrap();
    let r = run_experiments(&cfg, &[ExperimentId::Window], dir.path(), Execution::Parallel).unwrap();
    assert_eq!(r.window.unwrap().rows.len(), 2);
}

#[test]
fn held_out_path_comes_after_the_training_set() {
    let cfg = tiny();
    let c = Campaign::build(&cfg, 8, Execution::Parallel).unwrap();
    let (id, note) = pick_held_out(&c.traces, 5, c.topology.n_bs()).unwrap();
    assert!(id >= 5 && !note.is_empty());
    assert!(pick_held_out(&c.traces, 8, 2).is_err());
}

#[test]
fn configs_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    let cfg = ExperimentConfig::full().with_seed(99);
    cfg.save(&p).unwrap();
    let back = ExperimentConfig::load(&p).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.model.train.seed, 99);
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("format_version = 1"));
}
