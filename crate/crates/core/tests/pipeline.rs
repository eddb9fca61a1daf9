use std::sync::OnceLock;

use proptest::prelude::*;

use pcho_core::dataset::{build_dataset, export_csv, import_csv, make_windows, FeatureSet};
use pcho_core::mobility::{generate_trajectory_set, TrajectoryParams};
use pcho_core::sim::{best_server_timeline, read_traces_csv, simulate_campaign, write_traces_csv, RadioConfig, Trace};
use pcho_core::topology::{build_default_topology, NetworkTopology};
use pcho_core::{Execution, NodeKind};

const SEED: u64 = 21;

fn setup() -> &'static (NetworkTopology, Vec<Trace>) {
    static CELL: OnceLock<(NetworkTopology, Vec<Trace>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let topo = build_default_topology(SEED);
        let p = TrajectoryParams {
            n_waypoints: 3,
            ..TrajectoryParams::default()
        };
        let trajs = generate_trajectory_set(&topo, 6, &p, SEED).unwrap();
        let traces = simulate_campaign(&topo, &trajs, &RadioConfig::default(), SEED, Execution::Parallel).unwrap();
        (topo, traces)
    })
}

#[test]
fn traces_do_not_depend_on_campaign_size_or_threads() {
    let (topo, traces) = setup();
    let p = TrajectoryParams {
        n_waypoints: 3,
        ..TrajectoryParams::default()
    };
    let trajs = generate_trajectory_set(topo, 3, &p, SEED).unwrap();
    let prefix = simulate_campaign(topo, &trajs, &RadioConfig::default(), SEED, Execution::Sequential).unwrap();
    assert_eq!(&traces[..3], &prefix[..]);
}

#[test]
fn trace_csvs_split_by_kind_and_round_trip() {
    let (_, traces) = setup();
    let (mut bs, mut ap) = (Vec::new(), Vec::new());
    write_traces_csv(&mut bs, traces, NodeKind::CellularBs).unwrap();
    write_traces_csv(&mut ap, traces, NodeKind::WifiAp).unwrap();
    let bs_text = String::from_utf8(bs.clone()).unwrap();
    assert!(bs_text.lines().skip(1).all(|l| l.split(',').nth(2) == Some("bs")));
    let back = read_traces_csv(bs.as_slice(), ap.as_slice()).unwrap();
    assert_eq!(&back, traces);
}

#[test]
fn best_server_is_the_maximum_quality_node() {
    let (_, traces) = setup();
    for t in traces {
        for (k, best) in best_server_timeline(t).into_iter().enumerate() {
            let top = t.step(k).map(|m| m.sig_quality_db).fold(f64::NEG_INFINITY, f64::max);
            let chosen = t.step(k).find(|m| m.node == best).unwrap();
            assert_eq!(chosen.sig_quality_db, top);
        }
    }
}

#[test]
fn training_statistics_come_from_the_training_split_only() {
    let (_, traces) = setup();
    let split = build_dataset(traces, NodeKind::CellularBs, 9, 1, 0.8, FeatureSet::Full, 3, Execution::Parallel).unwrap();
    let n = split.train.len() as f64;
    for col in 0..3 {
        // every training row contributes each of its W values once
        let values: Vec<f64> = split.train.iter().flat_map(|s| s.features.column(col).to_vec()).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!(mean.abs() < 0.2, "column {col} mean {mean} over {n} windows");
    }
    let test_mean: f64 = split.test.iter().map(|s| s.targets[0]).sum::<f64>() / split.test.len() as f64;
    assert!(test_mean.is_finite());
}

#[test]
fn feature_sets_share_window_order() {
    let (_, traces) = setup();
    let full = build_dataset(traces, NodeKind::WifiAp, 7, 5, 0.8, FeatureSet::Full, 3, Execution::Parallel).unwrap();
    let sinr = build_dataset(traces, NodeKind::WifiAp, 7, 5, 0.8, FeatureSet::SinrOnly, 3, Execution::Parallel).unwrap();
    let ids = |v: &[pcho_core::dataset::WindowSample]| v.iter().map(|s| (s.traj_id, s.node, s.k)).collect::<Vec<_>>();
    assert_eq!(ids(&full.test), ids(&sinr.test));
    assert_eq!(ids(&full.train), ids(&sinr.train));
    let one = sinr.with_horizon(1).unwrap();
    assert_eq!(ids(&one.test), ids(&sinr.test));
    assert!(one.test.iter().zip(&sinr.test).all(|(a, b)| a.targets[..] == b.targets[..1]));
    assert!(sinr.with_horizon(6).is_err());
}

#[test]
fn dataset_export_carries_a_versioned_sidecar() {
    let (_, traces) = setup();
    let split = build_dataset(traces, NodeKind::WifiAp, 4, 2, 0.75, FeatureSet::SinrOnly, 8, Execution::Sequential).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ap.csv");
    export_csv(&split, &p).unwrap();
    let sidecar = std::fs::read_to_string(pcho_core::dataset::manifest_path(&p)).unwrap();
    assert!(sidecar.contains("format_version = 1"));
    assert_eq!(import_csv(&p).unwrap(), split);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_count_law_on_simulated_traces(traj in 0usize..6, w in 1usize..16, h in 1usize..6) {
        let (_, traces) = setup();
        let t = &traces[traj];
        for &node in &t.nodes {
            let windows = make_windows(t, node, w, h, FeatureSet::Full);
            if t.len() >= w + h {
                let windows = windows.unwrap();
                prop_assert_eq!(windows.len(), t.len() - w - h + 1);
                for s in &windows {
                    prop_assert_eq!(s.features.nrows(), w);
                    prop_assert_eq!(s.targets.len(), h);
                    prop_assert!(s.k + h < t.len());
                }
            } else {
                prop_assert!(windows.is_err());
            }
        }
    }

    #[test]
    fn split_sizes_follow_the_ratio(ratio in 0.1f64..0.95, seed in any::<u64>()) {
        let (_, traces) = setup();
        let split = build_dataset(traces, NodeKind::CellularBs, 5, 1, ratio, FeatureSet::SinrOnly, seed, Execution::Sequential).unwrap();
        let total = split.train.len() + split.test.len();
        prop_assert!((split.train.len() as f64 - ratio * total as f64).abs() <= 1.0);
    }
}
