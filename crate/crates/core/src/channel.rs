//! Link models: cellular path loss with Rician fading and co-channel
//! interference, WiFi log-distance path loss with obstacle penalties.
//!
//! Everything here works in linear units (watts, dimensionless ratios); the dB
//! helpers at the bottom are the only conversion boundary.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::topology::ApConfig;

/// Cellular distance clamp (m).
pub const CELLULAR_MIN_DISTANCE_M: f64 = 1.0;
/// Sentinel returned by [`rssi_dbm`] for zero received power.
pub const RSSI_FLOOR_DBM: f64 = -200.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingSample {
    pub coefficient: Complex64,
}

impl FadingSample {
    /// `|h|^2`.
    pub fn power(&self) -> f64 {
        self.coefficient.norm_sqr()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub rx_power_w: f64,
    pub pathloss_gain: f64,
    pub fading_power: f64,
}

impl LinkBudget {
    pub fn new(tx_power_w: f64, pathloss_gain: f64, fading_power: f64) -> Self {
        LinkBudget {
            rx_power_w: tx_power_w * pathloss_gain * fading_power,
            pathloss_gain,
            fading_power,
        }
    }

    /// Deterministic link (no small-scale fading).
    pub fn deterministic(tx_power_w: f64, pathloss_gain: f64) -> Self {
        Self::new(tx_power_w, pathloss_gain, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// `N0` in W/Hz.
    pub spectral_density: f64,
    /// `B` in Hz.
    pub bandwidth: f64,
}

impl NoiseModel {
    pub fn from_dbm_per_hz(density_dbm_hz: f64, bandwidth: f64) -> Self {
        NoiseModel {
            spectral_density: dbm_to_watts(density_dbm_hz),
            bandwidth,
        }
    }

    pub fn power(&self) -> f64 {
        self.spectral_density * self.bandwidth
    }
}

/// `G(d) = K * max(d, 1 m)^-alpha`.
pub fn cellular_pathloss_gain(distance_m: f64, scale: f64, exponent: f64) -> f64 {
    scale * distance_m.max(CELLULAR_MIN_DISTANCE_M).powf(-exponent)
}

/// `PL(d) = PL(d0) + 10 gamma log10(max(d, d0) / d0) + sum(L_j)`, in dB.
pub fn wifi_pathloss_db(distance_m: f64, cfg: &ApConfig) -> f64 {
    let d = distance_m.max(cfg.ref_distance_m);
    cfg.ref_pathloss_db
        + 10.0 * cfg.indoor_exponent * (d / cfg.ref_distance_m).log10()
        + cfg.obstacle_losses_db.iter().sum::<f64>()
}

/// Draws a unit-mean-power Rician coefficient
/// `sqrt(k/(k+1)) + sqrt(1/(k+1)) z`, `z ~ CN(0, 1)`, with a zero-phase LoS
/// component. Consumes exactly two normal draws from `rng`.
pub fn draw_rician<R: Rng + ?Sized>(k_factor_db: f64, rng: &mut R) -> FadingSample {
    let kappa = db_to_linear(k_factor_db);
    let los = (kappa / (kappa + 1.0)).sqrt();
    let nlos = (1.0 / (kappa + 1.0)).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    let z = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
    FadingSample {
        coefficient: Complex64::new(los, 0.0) + z * nlos,
    }
}

/// Linear SINR of a cellular link against co-channel interferers.
pub fn cellular_sinr(serving: &LinkBudget, interferers: &[LinkBudget], noise: &NoiseModel) -> f64 {
    let interference: f64 = interferers.iter().map(|l| l.rx_power_w).sum();
    serving.rx_power_w / (interference + noise.power())
}

/// Linear SNR of a WiFi link. WiFi budgets are built with
/// [`LinkBudget::deterministic`], so `fading_power` is 1.
pub fn wifi_snr(serving: &LinkBudget, noise: &NoiseModel) -> f64 {
    debug_assert!(serving.fading_power == 1.0 || serving.rx_power_w == 0.0);
    serving.rx_power_w / noise.power()
}

/// RSSI in dBm, floored at [`RSSI_FLOOR_DBM`].
pub fn rssi_dbm(rx_power_w: f64) -> f64 {
    watts_to_dbm(rx_power_w)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    if w > 0.0 {
        (10.0 * (w / 1e-3).log10()).max(RSSI_FLOOR_DBM)
    } else {
        RSSI_FLOOR_DBM
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Ratio in dB, floored at [`RSSI_FLOOR_DBM`] so zero maps to a finite value.
pub fn linear_to_db(x: f64) -> f64 {
    if x > 0.0 {
        (10.0 * x.log10()).max(RSSI_FLOOR_DBM)
    } else {
        RSSI_FLOOR_DBM
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::topology::Point;

    fn ap(gamma: f64, losses: Vec<f64>) -> ApConfig {
        ApConfig {
            position: Point::new(0.0, 0.0),
            tx_power_w: 0.1,
            carrier_freq_hz: 2.4e9,
            bandwidth_hz: 20e6,
            ref_pathloss_db: 40.0,
            ref_distance_m: 2.0,
            indoor_exponent: gamma,
            obstacle_losses_db: losses,
            channel_index: 1,
            parent_bs: 0,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn cellular_gain_examples() {
        assert_eq!(cellular_pathloss_gain(1.0, 1.0, 2.0), 1.0);
        let expect = 1e-3 * 100f64.powf(-3.5);
        assert!(rel(cellular_pathloss_gain(100.0, 1e-3, 3.5), expect) < 1e-12);
        assert_eq!(cellular_pathloss_gain(0.5, 1.0, 2.0), cellular_pathloss_gain(1.0, 1.0, 2.0));
    }

    #[test]
    fn wifi_pathloss_examples() {
        let cfg = ap(3.0, vec![]);
        assert_eq!(wifi_pathloss_db(2.0, &cfg), 40.0);
        assert_eq!(wifi_pathloss_db(1.0, &cfg), 40.0);
        let cfg = ap(3.0, vec![5.0]);
        assert!((wifi_pathloss_db(20.0, &cfg) - 75.0).abs() < 1e-12);
    }

    #[test]
    fn rician_pure_los_limit() {
        // |h|^2 - 1 ~ 2 sqrt(1/(k+1)) Re(z): std 1.4e-6 at k = 1e12, 1.4e-7 at 1e14
        let mut rng = substream(1, "t", &[]);
        for _ in 0..1000 {
            assert!((draw_rician(120.0, &mut rng).power() - 1.0).abs() < 1e-5);
            assert!((draw_rician(140.0, &mut rng).power() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rician_determinism() {
        let a: Vec<_> = {
            let mut r = substream(9, "f", &[]);
            (0..10).map(|_| draw_rician(6.0, &mut r).coefficient).collect()
        };
        let b: Vec<_> = {
            let mut r = substream(9, "f", &[]);
            (0..10).map(|_| draw_rician(6.0, &mut r).coefficient).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn rician_mean_power_across_k() {
        for k_db in [0.0, 6.0, 12.0, 20.0] {
            let mut rng = substream(42, "rician", &[k_db as u64]);
            let n = 100_000;
            let mean = (0..n).map(|_| draw_rician(k_db, &mut rng).power()).sum::<f64>() / n as f64;
            assert!((0.98..=1.02).contains(&mean), "K={k_db} dB mean {mean}");
        }
    }

    #[test]
    fn sinr_examples() {
        let noise = NoiseModel {
            spectral_density: 1e-12 / 1e6,
            bandwidth: 1e6,
        };
        let s = LinkBudget::deterministic(1e-9, 1.0);
        assert!(rel(cellular_sinr(&s, &[], &noise), 1000.0) < 1e-9);
        let quiet = NoiseModel {
            spectral_density: 1e-30,
            bandwidth: 1.0,
        };
        assert!((cellular_sinr(&s, &[s], &quiet) - 1.0).abs() < 1e-9);
        assert_eq!(cellular_sinr(&LinkBudget::deterministic(0.0, 1.0), &[s], &noise), 0.0);
    }

    #[test]
    fn wifi_snr_examples() {
        let noise = NoiseModel {
            spectral_density: 1e-13 / 2e7,
            bandwidth: 2e7,
        };
        let s = LinkBudget::deterministic(1e-10, 1.0);
        assert!(rel(wifi_snr(&s, &noise), 1000.0) < 1e-9);
        assert_eq!(wifi_snr(&LinkBudget::deterministic(0.0, 1.0), &noise), 0.0);
        let wide = NoiseModel {
            bandwidth: 4e7,
            ..noise
        };
        assert!(rel(wifi_snr(&s, &wide), 500.0) < 1e-9);
    }

    #[test]
    fn rssi_examples() {
        assert!(rssi_dbm(1e-3).abs() < 1e-12);
        assert!((rssi_dbm(1.0) - 30.0).abs() < 1e-12);
        assert!((rssi_dbm(1e-10) + 70.0).abs() < 1e-9);
        assert_eq!(rssi_dbm(0.0), RSSI_FLOOR_DBM);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cellular_gain_decreasing(d in 1.0f64..5000.0, step in 0.01f64..100.0, alpha in 1.5f64..5.0) {
                prop_assert!(cellular_pathloss_gain(d + step, 1e-3, alpha) < cellular_pathloss_gain(d, 1e-3, alpha));
            }

            #[test]
            fn wifi_loss_increasing(d in 2.0f64..500.0, step in 0.01f64..50.0, gamma in 1.0f64..5.0) {
                let cfg = ap(gamma, vec![3.0]);
                prop_assert!(wifi_pathloss_db(d + step, &cfg) > wifi_pathloss_db(d, &cfg));
            }

            #[test]
            fn interferers_never_raise_sinr(rx in 1e-15f64..1e-6, extra in proptest::collection::vec(0.0f64..1e-6, 0..5), i in 0.0f64..1e-6) {
                let noise = NoiseModel { spectral_density: 4e-21, bandwidth: 2e7 };
                let s = LinkBudget::deterministic(rx, 1.0);
                let mut ints: Vec<_> = extra.iter().map(|&p| LinkBudget::deterministic(p, 1.0)).collect();
                let before = cellular_sinr(&s, &ints, &noise);
                ints.push(LinkBudget::deterministic(i, 1.0));
                prop_assert!(cellular_sinr(&s, &ints, &noise) <= before);
            }

            #[test]
            fn dbm_round_trip(dbm in -180.0f64..60.0) {
                prop_assert!((rssi_dbm(dbm_to_watts(dbm)) - dbm).abs() < 1e-9);
            }
        }
    }
}
