use proptest::prelude::*;
use rand::SeedableRng;

use pcho_core::channel::{
    cellular_pathloss_gain, dbm_to_watts, draw_rician, watts_to_dbm, wifi_pathloss_db, CELLULAR_MIN_DISTANCE_M,
};
use pcho_core::mobility::{generate_trajectory, generate_trajectory_set, TrajectoryParams};
use pcho_core::rng::SimRng;
use pcho_core::topology::{build_topology, TopologyParams};

proptest! {
    #[test]
    fn cellular_gain_falls_with_distance(d in 1.0f64..5000.0, step in 0.01f64..100.0, alpha in 2.0f64..5.0) {
        let k = 1e-3;
        prop_assert!(cellular_pathloss_gain(d + step, k, alpha) < cellular_pathloss_gain(d, k, alpha));
    }

    #[test]
    fn cellular_gain_is_clamped_below_one_meter(d in 0.0f64..1.0, alpha in 2.0f64..5.0) {
        let k = 0.02;
        prop_assert_eq!(cellular_pathloss_gain(d, k, alpha), cellular_pathloss_gain(CELLULAR_MIN_DISTANCE_M, k, alpha));
    }

    #[test]
    fn wifi_pathloss_is_monotone(seed in 0u64..200, d in 0.0f64..300.0, step in 0.0f64..50.0) {
        let topo = build_topology(&TopologyParams::default(), seed).unwrap();
        let ap = &topo.ap_list[0];
        prop_assert!(wifi_pathloss_db(d + step, ap) >= wifi_pathloss_db(d, ap));
    }

    #[test]
    fn dbm_round_trip(dbm in -150.0f64..60.0) {
        let back = watts_to_dbm(dbm_to_watts(dbm));
        prop_assert!((back - dbm).abs() < 1e-9);
    }

    #[test]
    fn rician_draws_are_reproducible(seed in any::<u64>(), k_db in -10.0f64..20.0) {
        let mut a = SimRng::seed_from_u64(seed);
        let mut b = SimRng::seed_from_u64(seed);
        for _ in 0..8 {
            let (x, y) = (draw_rician(k_db, &mut a), draw_rician(k_db, &mut b));
            prop_assert_eq!(x, y);
            prop_assert!(x.power() >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn topology_invariants_hold_for_any_seed(seed in any::<u64>()) {
        let topo = build_topology(&TopologyParams::default(), seed).unwrap();
        prop_assert!(topo.validate().is_ok());
        prop_assert_eq!(topo.n_bs(), 2);
        prop_assert_eq!(topo.n_ap(), 4);
        for ap in &topo.ap_list {
            prop_assert!(topo.area.contains(&ap.position));
            prop_assert!(topo.in_bs_coverage(ap.parent_bs, &ap.position));
        }
    }

    #[test]
    fn trajectories_are_uniform_and_inside_the_area(seed in any::<u64>(), id in 0usize..50, waypoints in 2usize..7) {
        let topo = build_topology(&TopologyParams::default(), seed).unwrap();
        let p = TrajectoryParams { n_waypoints: waypoints, ..TrajectoryParams::default() };
        let t = generate_trajectory(&topo, id, &p, seed).unwrap();
        prop_assert_eq!(t.id, id);
        prop_assert!(t.len() >= p.min_points);
        prop_assert!(t.max_spacing_error() < 1e-6);
        prop_assert!(t.points.iter().all(|q| topo.area.contains(q)));
    }

    #[test]
    fn trajectory_sets_are_nested(seed in any::<u64>(), n in 1usize..8, extra in 1usize..4) {
        let topo = build_topology(&TopologyParams::default(), seed).unwrap();
        let p = TrajectoryParams { n_waypoints: 3, ..TrajectoryParams::default() };
        let small = generate_trajectory_set(&topo, n, &p, seed).unwrap();
        let large = generate_trajectory_set(&topo, n + extra, &p, seed).unwrap();
        prop_assert_eq!(&large[..n], &small[..]);
    }
}
