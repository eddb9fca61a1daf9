//! Autoregressive baseline: least-squares AR(p) on optionally differenced
//! series, i.e. ARIMA(p, d, 0) with an intercept.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ridge added when the normal equations are singular.
pub const RIDGE_FALLBACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub order: usize,
    pub difference: usize,
    pub intercept: f64,
    /// `phi[0]` multiplies the most recent value.
    pub coefficients: Vec<f64>,
}

fn difference(x: &[f64], d: usize) -> Vec<f64> {
    if d == 0 {
        x.to_vec()
    } else {
        x.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Cholesky solve of a symmetric system; `None` if not numerically positive
/// definite.
fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 1e-12 * scale {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

/// Fits AR(`order`) on the `difference`-th differences of every series.
pub fn fit_ar(series: &[Vec<f64>], order: usize, difference_order: usize) -> Result<ArModel> {
    if order == 0 {
        return Err(Error::invalid("AR order must be at least 1"));
    }
    if difference_order > 1 {
        return Err(Error::invalid("difference order must be 0 or 1"));
    }
    let dim = order + 1;
    let mut xtx = vec![vec![0.0; dim]; dim];
    let mut xty = vec![0.0; dim];
    let mut rows = 0usize;
    let mut row = vec![0.0; dim];
    for s in series {
        let x = difference(s, difference_order);
        for t in order..x.len() {
            row[0] = 1.0;
            for lag in 1..=order {
                row[lag] = x[t - lag];
            }
            for i in 0..dim {
                xty[i] += row[i] * x[t];
                for j in 0..dim {
                    xtx[i][j] += row[i] * row[j];
                }
            }
            rows += 1;
        }
    }
    if rows == 0 {
        return Err(Error::EmptyPool("no series long enough for the AR order".into()));
    }
    let beta = match cholesky_solve(&xtx, &xty) {
        Some(b) => b,
        None => {
            log::warn!("AR({order}) normal equations singular; using ridge {RIDGE_FALLBACK}");
            let mut reg = xtx.clone();
            for (i, r) in reg.iter_mut().enumerate() {
                r[i] += RIDGE_FALLBACK;
            }
            cholesky_solve(&reg, &xty)
                .ok_or_else(|| Error::invalid("AR normal equations singular even with ridge"))?
        }
    };
    Ok(ArModel {
        order,
        difference: difference_order,
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
    })
}

impl ArModel {
    /// Number of past levels needed to forecast.
    pub fn min_history(&self) -> usize {
        self.order + self.difference
    }

    /// Forecasts `steps` future levels by linear recursion.
    pub fn forecast(&self, history: &[f64], steps: usize) -> Result<Vec<f64>> {
        if history.len() < self.min_history() {
            return Err(Error::invalid(format!(
                "AR forecast needs {} past values, got {}",
                self.min_history(),
                history.len()
            )));
        }
        let mut x = difference(history, self.difference);
        let mut level = *history.last().unwrap();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let n = x.len();
            let next = self.intercept
                + self
                    .coefficients
                    .iter()
                    .enumerate()
                    .map(|(lag, phi)| phi * x[n - 1 - lag])
                    .sum::<f64>();
            x.push(next);
            if self.difference == 1 {
                level += next;
                out.push(level);
            } else {
                out.push(next);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn noisy_ar2_is_consistent() {
        let (c, p1, p2) = (0.5, 0.6, -0.3);
        let mut rng = substream(3, "ar", &[]);
        let mut x = vec![0.0, 0.0];
        for _ in 0..200_000 {
            let n = x.len();
            let e: f64 = rng.sample(StandardNormal);
            x.push(c + p1 * x[n - 1] + p2 * x[n - 2] + 0.1 * e);
        }
        let m = fit_ar(&[x], 2, 0).unwrap();
        // sampling std of each coefficient is about 2e-3 at this length
        assert!((m.coefficients[0] - p1).abs() < 1e-2, "{m:?}");
        assert!((m.coefficients[1] - p2).abs() < 1e-2, "{m:?}");
        assert!((m.intercept - c).abs() < 2e-2, "{m:?}");
    }

    #[test]
    fn exact_noiseless_ar2_is_identified() {
        let mut x = vec![1.0, -0.5];
        for _ in 0..50 {
            let n = x.len();
            x.push(0.9 * x[n - 1] - 0.2 * x[n - 2] + 0.1);
        }
        let m = fit_ar(&[x], 2, 0).unwrap();
        assert!((m.coefficients[0] - 0.9).abs() < 1e-3);
        assert!((m.coefficients[1] + 0.2).abs() < 1e-3);
        assert!((m.intercept - 0.1).abs() < 1e-3);
    }

    #[test]
    fn constant_series_differenced_forecasts_constant() {
        let m = fit_ar(&[vec![4.2; 40]], 3, 1).unwrap();
        let f = m.forecast(&[4.2; 10], 5).unwrap();
        assert!(f.iter().all(|v| (v - 4.2).abs() < 1e-12));
    }

    #[test]
    fn white_noise_has_no_memory() {
        let mut rng = substream(8, "wn", &[]);
        let x: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let m = fit_ar(&[x], 1, 0).unwrap();
        assert!(m.coefficients[0].abs() < 0.1);
    }

    #[test]
    fn rejects_bad_orders_and_short_history() {
        assert!(fit_ar(&[vec![1.0; 10]], 0, 0).is_err());
        assert!(fit_ar(&[vec![1.0, 2.0]], 3, 0).is_err());
        let m = fit_ar(&[(0..30).map(|v| (v as f64).sin()).collect()], 2, 1).unwrap();
        assert!(m.forecast(&[1.0, 2.0], 1).is_err());
    }
}
