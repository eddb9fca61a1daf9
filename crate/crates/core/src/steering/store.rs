//! Per-(UE, node) measurement history and window assembly.

use std::collections::{BTreeMap, VecDeque};

use ndarray::Array2;

use crate::dataset::{FeatureSet, NormStats};
use crate::sim::MeasurementTuple;
use crate::topology::NodeId;
use crate::{Error, Result};

/// Ring buffers of contiguous measurement reports.
#[derive(Debug, Clone)]
pub struct MeasurementStore {
    capacity: usize,
    buffers: BTreeMap<(usize, NodeId), VecDeque<MeasurementTuple>>,
}

/// Outcome of window assembly.
#[derive(Debug, Clone, PartialEq)]
pub enum Assembled {
    /// Normalized `W x F` window, oldest row first.
    Ready(Array2<f64>),
    NotReady { have: usize, need: usize },
}

impl MeasurementStore {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("store capacity must be positive"));
        }
        Ok(MeasurementStore {
            capacity,
            buffers: BTreeMap::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends one report of UE `ue`. Steps must be contiguous per node.
    pub fn ingest(&mut self, ue: usize, tuple: MeasurementTuple) -> Result<()> {
        let buf = self.buffers.entry((ue, tuple.node)).or_default();
        if let Some(last) = buf.back() {
            if tuple.step != last.step + 1 {
                return Err(Error::OutOfOrder {
                    node: tuple.node.to_string(),
                    expected: last.step + 1,
                    got: tuple.step,
                });
            }
        }
        if buf.len() == self.capacity {
            buf.pop_front();
        }
        buf.push_back(tuple);
        Ok(())
    }

    pub fn len(&self, ue: usize, node: NodeId) -> usize {
        self.buffers.get(&(ue, node)).map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.values().all(VecDeque::is_empty)
    }

    /// Nodes with at least one report from `ue`, in node order.
    pub fn nodes(&self, ue: usize) -> Vec<NodeId> {
        self.buffers
            .range((ue, NodeId::bs(0))..)
            .take_while(|((u, _), _)| *u == ue)
            .map(|((_, n), _)| *n)
            .collect()
    }

    pub fn latest_step(&self, ue: usize, node: NodeId) -> Option<usize> {
        self.buffers.get(&(ue, node)).and_then(|b| b.back()).map(|t| t.step)
    }

    pub fn history(&self, ue: usize, node: NodeId) -> impl Iterator<Item = &MeasurementTuple> {
        self.buffers.get(&(ue, node)).into_iter().flatten()
    }

    /// Normalized window of the newest `window` reports.
    pub fn assemble(&self, ue: usize, node: NodeId, window: usize, norm: &NormStats, set: FeatureSet) -> Assembled {
        let have = self.len(ue, node);
        if window == 0 || have < window {
            return Assembled::NotReady { have, need: window };
        }
        let buf = &self.buffers[&(ue, node)];
        let f = set.width();
        let mut out = Array2::zeros((window, f));
        for (r, t) in buf.iter().skip(have - window).enumerate() {
            for (c, v) in norm.normalize_tuple(t, set).into_iter().enumerate() {
                out[[r, c]] = v;
            }
        }
        Assembled::Ready(out)
    }
}
