//! Gradient-boosted regression trees with squared-error loss.
//!
//! Splits are exact greedy variance-reduction splits found over presorted
//! feature orders; the per-feature search of large nodes runs through
//! [`Execution`].

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::{Error, Result};

/// Nodes smaller than this search their features sequentially.
const PARALLEL_NODE_MIN: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_trees: 100,
            max_depth: Some(4),
            learning_rate: 0.1,
            min_samples_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &RegressionTree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

/// One boosted ensemble per output column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub config: GbtConfig,
    pub base: Vec<f64>,
    pub trees: Vec<Vec<RegressionTree>>,
}

impl GbtModel {
    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        self.base
            .iter()
            .zip(&self.trees)
            .map(|(b, ts)| b + ts.iter().map(|t| t.predict(x)).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.base.len()));
        for (r, row) in x.rows().into_iter().enumerate() {
            let row = row.to_vec();
            for (j, v) in self.predict_row(&row).into_iter().enumerate() {
                out[[r, j]] = v;
            }
        }
        out
    }
}

struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct TreeBuilder<'a> {
    x: ArrayView2<'a, f64>,
    residual: &'a [f64],
    cfg: &'a GbtConfig,
    exec: Execution,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn best_split_for(&self, feature: usize, order: &[u32], total: f64) -> Option<SplitCandidate> {
        let n = order.len();
        let min_leaf = self.cfg.min_samples_leaf.max(1);
        let parent = total * total / n as f64;
        let mut left_sum = 0.0;
        let mut best: Option<SplitCandidate> = None;
        for pos in 0..n - 1 {
            let i = order[pos] as usize;
            left_sum += self.residual[i];
            let nl = pos + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let xv = self.x[[i, feature]];
            let xn = self.x[[order[pos + 1] as usize, feature]];
            if xn <= xv {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - parent;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate {
                    gain,
                    feature,
                    threshold: 0.5 * (xv + xn),
                });
            }
        }
        best
    }

    /// `orders[f]` lists the node's samples sorted by feature `f`.
    fn grow(&mut self, orders: Vec<Vec<u32>>, depth: usize) -> usize {
        let idx = self.nodes.len();
        let samples = &orders[0];
        let n = samples.len();
        let total: f64 = samples.iter().map(|&i| self.residual[i as usize]).sum();
        let mean = total / n as f64;
        self.nodes.push(TreeNode::Leaf(self.cfg.learning_rate * mean));

        let depth_ok = self.cfg.max_depth.is_none_or(|d| depth < d);
        let pure = samples
            .iter()
            .all(|&i| (self.residual[i as usize] - mean).abs() <= 1e-15 * mean.abs().max(1.0));
        if !depth_ok || pure || n < 2 * self.cfg.min_samples_leaf.max(1) {
            return idx;
        }
        let n_features = orders.len();
        let search = |f: usize| self.best_split_for(f, &orders[f], total);
        let candidates = if n >= PARALLEL_NODE_MIN {
            self.exec.map_range(n_features, search)
        } else {
            (0..n_features).map(search).collect()
        };
        let mut best: Option<SplitCandidate> = None;
        for c in candidates.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        let Some(split) = best.filter(|b| b.gain > 1e-12) else {
            return idx;
        };
        let goes_left = |i: u32| self.x[[i as usize, split.feature]] <= split.threshold;
        let mut left_orders = Vec::with_capacity(n_features);
        let mut right_orders = Vec::with_capacity(n_features);
        for ord in orders {
            let (l, r): (Vec<u32>, Vec<u32>) = ord.into_iter().partition(|&i| goes_left(i));
            left_orders.push(l);
            right_orders.push(r);
        }
        let left = self.grow(left_orders, depth + 1);
        let right = self.grow(right_orders, depth + 1);
        self.nodes[idx] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        idx
    }
}

/// Fits one boosted ensemble per column of `y`.
pub fn fit_gbt(x: ArrayView2<f64>, y: ArrayView2<f64>, cfg: &GbtConfig, exec: Execution) -> Result<GbtModel> {
    let n = x.nrows();
    if n == 0 || y.nrows() != n {
        return Err(Error::EmptyPool("GBT needs matching, non-empty x and y".into()));
    }
    let n_features = x.ncols();
    let root_orders: Vec<Vec<u32>> = exec.map_range(n_features, |f| {
        let mut o: Vec<u32> = (0..n as u32).collect();
        o.sort_by(|&a, &b| x[[a as usize, f]].total_cmp(&x[[b as usize, f]]).then(a.cmp(&b)));
        o
    });
    let mut base = Vec::with_capacity(y.ncols());
    let mut trees = Vec::with_capacity(y.ncols());
    for col in y.columns() {
        let mean = col.sum() / n as f64;
        let mut pred = vec![mean; n];
        let mut ensemble = Vec::with_capacity(cfg.n_trees);
        let mut residual = vec![0.0; n];
        for _ in 0..cfg.n_trees {
            for i in 0..n {
                residual[i] = col[i] - pred[i];
            }
            let mut b = TreeBuilder {
                x,
                residual: &residual,
                cfg,
                exec,
                nodes: Vec::new(),
            };
            b.grow(root_orders.clone(), 0);
            let tree = RegressionTree { nodes: b.nodes };
            for (i, p) in pred.iter_mut().enumerate() {
                let row = x.row(i);
                *p += tree.predict(row.as_slice().expect("standard layout"));
            }
            ensemble.push(tree);
        }
        base.push(mean);
        trees.push(ensemble);
    }
    Ok(GbtModel {
        config: cfg.clone(),
        base,
        trees,
    })
}
