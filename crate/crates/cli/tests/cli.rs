use std::path::Path;
use std::process::{Command, Output};

use pcho_core::experiments::ExperimentConfig;

fn pcho(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcho"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn topology_and_simulate_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = pcho(&["topology", "--n-traj", "3"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let o = pcho(&["simulate", "--n-traj", "3", "--seed", "5"], dir.path());
    assert!(o.status.success(), "{o:?}");
    for f in ["scenario.toml", "trajectories.csv", "traces_bs.csv", "traces_ap.csv", "manifest.txt"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let traces = std::fs::read_to_string(dir.path().join("traces_ap.csv")).unwrap();
    assert!(traces.starts_with("traj_id,step,node_kind,node_index,rssi_dbm,sig_quality_db,throughput_bps"));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 5"));
}

#[test]
fn train_then_eval_reproduces_the_stored_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let o = pcho(&["train", "--rat", "ap", "--model", "lstm", "--n-traj", "3", "--horizon", "2"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let label = "ap_lstm_nt3_w7_h2_full";
    let ck = dir.path().join(format!("model_{label}.json"));
    let ds = dir.path().join(format!("dataset_{label}.csv"));
    let eval_dir = dir.path().join("eval");
    let o = pcho(&["eval", "--checkpoint", ck.to_str().unwrap(), "--dataset", ds.to_str().unwrap()], &eval_dir);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("PASS test RMSE reproduced"));
    let table = std::fs::read_to_string(eval_dir.join("eval.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    // a different dataset must not pass for the pinned one
    let other = pcho(&["train", "--rat", "ap", "--model", "ar", "--n-traj", "4", "--horizon", "2"], dir.path());
    assert!(other.status.success(), "{other:?}");
    let wrong = dir.path().join("dataset_ap_ar_nt4_w7_h2_full.csv");
    let o = pcho(&["eval", "--checkpoint", ck.to_str().unwrap(), "--dataset", wrong.to_str().unwrap()], &eval_dir);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    assert!(stdout(&o).contains("FAIL data hash"));
}

#[test]
fn dataset_subcommand_exports_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let o = pcho(&["dataset", "--rat", "bs", "--n-traj", "2", "--window", "4", "--horizon", "3", "--features", "sinr"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let csv = std::fs::read_to_string(dir.path().join("dataset_bs.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("traj_id,node_kind,node_index,k,"));
    assert!(header.ends_with(",y_1,y_2,y_3"));
    assert!(header.contains("f3_sq") && !header.contains("rssi"));
    assert!(dir.path().join("dataset_bs.csv.manifest.toml").exists());
}

#[test]
fn experiment_exit_code_reflects_assertions() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::desk();
    cfg.trajectory.n_waypoints = 2;
    cfg.model.train.epochs = 1;
    cfg.handover.n_traj = 3;
    cfg.handover.held_out_pool = 2;
    cfg.horizon_sweep.n_traj = 3;
    cfg.handover.deltas_db = vec![0.0, 3.0];
    let path = dir.path().join("tiny.toml");
    cfg.save(&path).unwrap();
    let o = pcho(&["exp-handover", "--config", path.to_str().unwrap()], dir.path());
    let text = stdout(&o);
    let all_pass = text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).all(|l| l.starts_with("PASS"));
    assert_eq!(o.status.success(), all_pass, "{text}");
    for f in ["handover_counts.csv", "handover_timeline.csv", "assertions.csv", "manifest.txt"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
}

#[test]
fn config_and_full_are_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let o = pcho(&["run-all", "--full", "--config", "x.toml"], dir.path());
    assert!(!o.status.success());
    let o = pcho(&["run-all", "--config", "does-not-exist.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
