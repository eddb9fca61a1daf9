//! Finite-difference verification of the analytic network gradients.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::network::{batch_inputs, mse_with_grad, Network};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub n_checked: usize,
    pub max_rel_error: f64,
    /// `(tensor, element)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub tolerance: f64,
    pub passed: bool,
}

fn loss_of(net: &Network, xs: &[Array2<f64>], target: &Array2<f64>) -> f64 {
    mse_with_grad(&net.predict(xs), target).0
}

/// Compares every analytic parameter gradient of the MSE loss on one sample
/// against central differences. Dropout is not applied. Passes iff the worst
/// relative error is strictly below `tolerance`.
pub fn gradient_check(net: &Network, window: ArrayView2<f64>, target: &[f64], tolerance: f64) -> GradCheckReport {
    let xs = batch_inputs([window], net.window, net.input_dim);
    let y = Array2::from_shape_vec((1, target.len()), target.to_vec()).expect("target row");
    let (pred, tape) = net.forward(&xs, None);
    let (_, d_out) = mse_with_grad(&pred, &y);
    let mut grad = net.zeros_like();
    net.backward(&tape, d_out, &mut grad);
    let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();

    let mut probe = net.clone();
    let mut max_rel = 0.0_f64;
    let mut worst = None;
    let mut n_checked = 0;
    for (ti, a_t) in analytic.iter().enumerate() {
        for (ei, &a) in a_t.iter().enumerate() {
            let orig = probe.tensors()[ti][ei];
            probe.tensors_mut()[ti][ei] = orig + FD_STEP;
            let up = loss_of(&probe, &xs, &y);
            probe.tensors_mut()[ti][ei] = orig - FD_STEP;
            let down = loss_of(&probe, &xs, &y);
            probe.tensors_mut()[ti][ei] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some((ti, ei));
            }
            n_checked += 1;
        }
    }
    GradCheckReport {
        n_checked,
        max_rel_error: max_rel,
        worst,
        tolerance,
        passed: n_checked > 0 && max_rel < tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::network::{Activation, BiLstmParams, Dense, LstmParams, Recurrent};
    use crate::rng::substream;
    use rand::Rng;

    fn random_window(rng: &mut crate::rng::SimRng, w: usize, f: usize) -> Array2<f64> {
        Array2::from_shape_fn((w, f), |_| rng.random_range(-1.5..1.5))
    }

    fn bilstm(rng: &mut crate::rng::SimRng, w: usize, f: usize, h: usize, out: usize) -> Network {
        let l1 = BiLstmParams {
            forward: LstmParams::init(f, h, rng),
            backward: LstmParams::init(f, h, rng),
        };
        let l2 = BiLstmParams {
            forward: LstmParams::init(2 * h, h, rng),
            backward: LstmParams::init(2 * h, h, rng),
        };
        let mut net = Network {
            window: w,
            input_dim: f,
            recurrent: Recurrent::Bidirectional(vec![l1, l2]),
            head: vec![
                Dense::init(2 * h, 6, Activation::Relu, rng),
                Dense::init(6, out, Activation::Identity, rng),
            ],
            dropout: 0.2,
        };
        // nonzero biases so every path carries gradient
        for t in net.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        net
    }

    #[test]
    fn bilstm_gradients_match_finite_differences() {
        for trial in 0..10 {
            let mut rng = substream(trial, "gradcheck", &[]);
            let net = bilstm(&mut rng, 4, 3, 4, 2);
            let x = random_window(&mut rng, 4, 3);
            let y = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let r = gradient_check(&net, x.view(), &y, 1e-4);
            assert!(r.passed, "trial {trial}: {r:?}");
        }
    }

    #[test]
    fn unidirectional_stack_gradients_match() {
        let mut rng = substream(2, "gradcheck", &[]);
        let mut net = Network {
            window: 5,
            input_dim: 2,
            recurrent: Recurrent::Unidirectional(vec![LstmParams::init(2, 3, &mut rng), LstmParams::init(3, 4, &mut rng)]),
            head: vec![Dense::init(4, 3, Activation::Identity, &mut rng)],
            dropout: 0.0,
        };
        net.tensors_mut().iter_mut().for_each(|t| t.iter_mut().for_each(|v| *v += 0.05));
        let x = random_window(&mut rng, 5, 2);
        let r = gradient_check(&net, x.view(), &[0.3, -0.2, 0.8], 1e-4);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn single_step_bilstm_gradients_match() {
        let mut rng = substream(4, "gradcheck", &[]);
        let net = bilstm(&mut rng, 1, 2, 3, 1);
        let x = random_window(&mut rng, 1, 2);
        let r = gradient_check(&net, x.view(), &[0.5], 1e-4);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn linear_model_is_exact() {
        let mut rng = substream(6, "gradcheck", &[]);
        let mut net = Network {
            window: 3,
            input_dim: 2,
            recurrent: Recurrent::None,
            head: vec![Dense::init(6, 2, Activation::Identity, &mut rng)],
            dropout: 0.0,
        };
        net.head[0].b.fill(0.3);
        let x = random_window(&mut rng, 3, 2);
        let r = gradient_check(&net, x.view(), &[2.0, -1.0], 1e-7);
        assert!(r.passed, "{r:?}");
        assert_eq!(r.n_checked, 14);
    }

    #[test]
    fn zero_tolerance_always_fails() {
        let mut rng = substream(7, "gradcheck", &[]);
        let net = bilstm(&mut rng, 3, 2, 2, 1);
        let x = random_window(&mut rng, 3, 2);
        let r = gradient_check(&net, x.view(), &[0.1], 0.0);
        assert!(!r.passed);
        assert!(r.n_checked > 0);
    }
}
