use std::sync::OnceLock;

use ndarray::Array2;
use proptest::prelude::*;

use pcho_core::dataset::{build_dataset, DatasetSplit, FeatureSet};
use pcho_core::forecast::ar::fit_ar;
use pcho_core::forecast::gbt::GbtConfig;
use pcho_core::forecast::model::rmse_per_step;
use pcho_core::forecast::{ArchConfig, PredictorKind, PredictorModel, TrainConfig};
use pcho_core::mobility::{generate_trajectory_set, TrajectoryParams};
use pcho_core::sim::{simulate_campaign, RadioConfig};
use pcho_core::topology::build_default_topology;
use pcho_core::{Error, Execution, NodeKind};

fn split(kind: NodeKind, window: usize, horizon: usize, set: FeatureSet) -> DatasetSplit {
    static TRACES: OnceLock<Vec<pcho_core::sim::Trace>> = OnceLock::new();
    let traces = TRACES.get_or_init(|| {
        let topo = build_default_topology(4);
        let p = TrajectoryParams {
            n_waypoints: 3,
            ..TrajectoryParams::default()
        };
        let trajs = generate_trajectory_set(&topo, 4, &p, 4).unwrap();
        simulate_campaign(&topo, &trajs, &RadioConfig::default(), 4, Execution::Parallel).unwrap()
    });
    build_dataset(traces, kind, window, horizon, 0.8, set, 4, Execution::Parallel).unwrap()
}

fn short_training() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        patience: None,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn assert_checkpoint_reproduces(m: &PredictorModel, s: &DatasetSplit) {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("model.json");
    m.save_checkpoint(&p).unwrap();
    let back = PredictorModel::load_checkpoint(&p).unwrap();
    assert_eq!(&back, m);
    let stored = &m.manifest.test_rmse_db;
    let now = back.evaluate_rmse(&s.test, Execution::Parallel).unwrap();
    assert_eq!(stored.len(), now.len());
    for (a, b) in stored.iter().zip(&now) {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
}

#[test]
fn checkpoints_reproduce_stored_rmse_for_every_kind() {
    let bs = split(NodeKind::CellularBs, 5, 3, FeatureSet::Full);
    let mut lstm = PredictorModel::neural_for(PredictorKind::BiLstmBs, &bs, &ArchConfig::default(), 1).unwrap();
    lstm.train(&bs, &short_training()).unwrap();
    assert_checkpoint_reproduces(&lstm, &bs);

    let ap = split(NodeKind::WifiAp, 4, 1, FeatureSet::SinrOnly);
    let mut lite = PredictorModel::neural_for(PredictorKind::LiteLstmAp, &ap, &ArchConfig::default(), 1).unwrap();
    lite.train(&ap, &short_training()).unwrap();
    assert_checkpoint_reproduces(&lite, &ap);

    let gbt_cfg = GbtConfig {
        n_trees: 5,
        ..GbtConfig::default()
    };
    assert_checkpoint_reproduces(&PredictorModel::fit_gbt_baseline(&bs, &gbt_cfg, Execution::Parallel).unwrap(), &bs);
    assert_checkpoint_reproduces(&PredictorModel::fit_ar_baseline(&ap, 3, 1).unwrap(), &ap);
}

#[test]
fn checkpoint_with_unknown_version_is_refused() {
    let ap = split(NodeKind::WifiAp, 4, 1, FeatureSet::Full);
    let m = PredictorModel::fit_ar_baseline(&ap, 2, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    m.save_checkpoint(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap().replacen("\"format_version\":1", "\"format_version\":7", 1);
    std::fs::write(&p, text).unwrap();
    assert!(matches!(
        PredictorModel::load_checkpoint(&p),
        Err(Error::VersionMismatch { found: 7, expected: 1 })
    ));
}

#[test]
fn recursive_single_step_equals_direct() {
    let ap = split(NodeKind::WifiAp, 6, 4, FeatureSet::SinrOnly);
    let one = ap.with_horizon(1).unwrap();
    let mut m = PredictorModel::neural_for(PredictorKind::LiteLstmAp, &one, &ArchConfig::default(), 2).unwrap();
    m.train(&one, &short_training()).unwrap();
    let direct = m.evaluate_rmse(&ap.test, Execution::Sequential).unwrap();
    let recursive = m.evaluate_rmse_recursive(&ap.test, 4, Execution::Parallel).unwrap();
    assert_eq!(recursive.len(), 4);
    assert!((direct[0] - recursive[0]).abs() <= 1e-12);
}

#[test]
fn multi_feature_models_cannot_recurse() {
    let bs = split(NodeKind::CellularBs, 5, 1, FeatureSet::Full);
    let m = PredictorModel::fit_ar_baseline(&bs, 2, 1).unwrap();
    let windows: Vec<_> = bs.test.iter().map(|s| s.features.view()).collect();
    assert!(m.predict_recursive_batch(&windows, 3, Execution::Sequential).is_err());
}

#[test]
fn training_on_the_wrong_shape_is_rejected() {
    let bs = split(NodeKind::CellularBs, 5, 1, FeatureSet::Full);
    let other = split(NodeKind::CellularBs, 6, 1, FeatureSet::Full);
    let mut m = PredictorModel::neural_for(PredictorKind::BiLstmBs, &bs, &ArchConfig::default(), 1).unwrap();
    assert!(matches!(m.train(&other, &short_training()), Err(Error::ShapeMismatch(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rmse_is_zero_on_itself_and_scales(rows in 1usize..20, cols in 1usize..4, scale in 0.1f64..10.0, seed in any::<u64>()) {
        let mut state = seed;
        let mut next = || { state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5 };
        let a = Array2::from_shape_fn((rows, cols), |_| next());
        let b = Array2::from_shape_fn((rows, cols), |_| next());
        prop_assert!(rmse_per_step(&a, &a).iter().all(|v| *v == 0.0));
        let base = rmse_per_step(&a, &b);
        let scaled = rmse_per_step(&(&a * scale), &(&b * scale));
        for (x, y) in base.iter().zip(&scaled) {
            prop_assert!((x * scale - y).abs() <= 1e-12 * (1.0 + y));
        }
    }

    #[test]
    fn ar_forecasts_of_a_line_stay_on_it(slope in -2.0f64..2.0, offset in -50.0f64..50.0, steps in 1usize..6) {
        let series: Vec<Vec<f64>> = (0..4)
            .map(|s| (0..30).map(|k| offset + slope * (k + 7 * s) as f64).collect())
            .collect();
        let ar = fit_ar(&series, 2, 1).unwrap();
        let history: Vec<f64> = (0..6).map(|k| offset + slope * k as f64).collect();
        let f = ar.forecast(&history, steps).unwrap();
        for (i, v) in f.iter().enumerate() {
            let want = offset + slope * (6 + i) as f64;
            prop_assert!((v - want).abs() < 1e-6 * (1.0 + want.abs()), "{} vs {}", v, want);
        }
    }
}
