//! Mini-batch training of [`Network`]s with Adam and early stopping.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{batch_inputs, mse_with_grad, Network};
use crate::rng::substream;
use crate::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Rows per forward pass when scoring a whole split.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without test-loss improvement before stopping; `None` disables.
    pub patience: Option<usize>,
    /// Whether dropout masks are applied during training.
    pub dropout: bool,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            patience: Some(10),
            dropout: true,
            grad_clip: Some(5.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    /// Mean normalized MSE over each epoch's batches.
    pub train: Vec<f64>,
    /// Normalized MSE on the held-out split after each epoch; empty without
    /// a held-out split.
    pub test: Vec<f64>,
    /// Epoch whose weights were kept, if any ran.
    pub best_epoch: Option<usize>,
}

/// Supervised rows: one `W x F` window and one target row each.
pub struct Batchable<'a> {
    pub windows: Vec<ArrayView2<'a, f64>>,
    pub targets: Array2<f64>,
}

impl Batchable<'_> {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Mean squared error of `net` over `data`, without dropout.
pub fn evaluate_loss(net: &Network, data: &Batchable) -> f64 {
    let mut total = 0.0;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let xs = batch_inputs(data.windows[start..end].iter().cloned(), net.window, net.input_dim);
        let pred = net.predict(&xs);
        let tgt = data.targets.slice(ndarray::s![start..end, ..]);
        total += (&pred - &tgt).iter().map(|d| d * d).sum::<f64>();
    }
    total / data.targets.len() as f64
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(net: &Network) -> Self {
        let zeros: Vec<Vec<f64>> = net.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Network, grad: &Network, lr: f64, scale: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), m), v) in net
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Trains `net` in place. Early stopping watches the test loss (the train
/// loss when `test` is empty) and restores the best weights seen.
pub fn train_network(net: &mut Network, train: &Batchable, test: &Batchable, cfg: &TrainConfig) -> Result<LossHistory> {
    if train.is_empty() {
        return Err(Error::EmptyPool("no training windows".into()));
    }
    if train.targets.ncols() != net.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "targets have {} columns, network emits {}",
            train.targets.ncols(),
            net.output_dim()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut history = LossHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = substream(cfg.seed, "train-shuffle", &[]);
    let mut dropout_rng = substream(cfg.seed, "dropout", &[]);
    let mut adam = Adam::new(net);
    let mut grad = net.zeros_like();
    let mut best: Option<(f64, Network)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xs = batch_inputs(chunk.iter().map(|&i| train.windows[i]), net.window, net.input_dim);
            let y = Array2::from_shape_fn((chunk.len(), train.targets.ncols()), |(r, c)| train.targets[[chunk[r], c]]);
            let (pred, tape) = net.forward(&xs, cfg.dropout.then_some(&mut dropout_rng));
            let (loss, d_out) = mse_with_grad(&pred, &y);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            grad.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
            net.backward(&tape, d_out, &mut grad);
            let scale = match cfg.grad_clip {
                Some(clip) => {
                    let norm = grad
                        .tensors()
                        .iter()
                        .flat_map(|t| t.iter())
                        .map(|g| g * g)
                        .sum::<f64>()
                        .sqrt();
                    if norm > clip { clip / norm } else { 1.0 }
                }
                None => 1.0,
            };
            adam.step(net, &grad, cfg.learning_rate, scale);
            epoch_loss += loss * chunk.len() as f64;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let monitored = if test.is_empty() {
            train_loss
        } else {
            evaluate_loss(net, test)
        };
        if !monitored.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.train.push(train_loss);
        if !test.is_empty() {
            history.test.push(monitored);
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} monitored {monitored:.5}");
        if best.as_ref().is_none_or(|(b, _)| monitored < *b) {
            best = Some((monitored, net.clone()));
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    if let Some((_, w)) = best {
        *net = w;
    }
    Ok(history)
}
