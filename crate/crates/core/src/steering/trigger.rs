//! Forecast-conditioned handover triggers and target selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::store::{Assembled, MeasurementStore};
use crate::exec::Execution;
use crate::forecast::PredictorModel;
use crate::topology::{NodeId, NodeKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerMode {
    /// Margin at the next step only.
    Soft,
    /// Margin at each of the next `n` forecast steps, from one decision instant.
    Hysteresis,
    /// Soft margin held by the same candidate at `n` consecutive decision
    /// instants.
    DwellTimer,
}

impl TriggerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerMode::Soft => "soft",
            TriggerMode::Hysteresis => "hysteresis",
            TriggerMode::DwellTimer => "dwell_timer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub delta_qos_db: f64,
    pub mode: TriggerMode,
    /// Consecutive steps; ignored in soft mode.
    pub n: usize,
}

impl TriggerConfig {
    pub fn soft(delta_qos_db: f64) -> Self {
        TriggerConfig {
            delta_qos_db,
            mode: TriggerMode::Soft,
            n: 1,
        }
    }

    pub fn hysteresis(delta_qos_db: f64, n: usize) -> Self {
        TriggerConfig {
            delta_qos_db,
            mode: TriggerMode::Hysteresis,
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_qos_db >= 0.0) {
            return Err(Error::invalid("delta_qos must be a non-negative number of dB"));
        }
        if self.mode != TriggerMode::Soft && self.n == 0 {
            return Err(Error::invalid("hysteresis length must be at least 1"));
        }
        Ok(())
    }

    /// Forecast steps the trigger inspects.
    pub fn horizons_needed(&self) -> usize {
        match self.mode {
            TriggerMode::Hysteresis => self.n,
            _ => 1,
        }
    }

    /// Whether margins `delta[h]` (target minus serving, one per forecast
    /// step) satisfy the condition. `held` counts earlier consecutive
    /// instants at which the same candidate met the soft margin.
    pub fn holds(&self, delta: &[f64], held: usize) -> bool {
        let soft = delta.first().is_some_and(|d| *d >= self.delta_qos_db);
        match self.mode {
            TriggerMode::Soft => soft,
            TriggerMode::Hysteresis => delta.len() >= self.n && delta[..self.n].iter().all(|d| *d >= self.delta_qos_db),
            TriggerMode::DwellTimer => soft && held + 1 >= self.n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Stay,
    Handover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateForecast {
    pub node: NodeId,
    /// Predicted signal quality in dB at `k+1 ..`.
    pub predicted_db: Vec<f64>,
    /// Predicted minus serving prediction, per step.
    pub delta_db: Vec<f64>,
    pub triggered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringDecision {
    pub step: usize,
    pub serving: NodeId,
    pub target: Option<NodeId>,
    pub action: Action,
    /// Every node with a ready window, serving included, in node order.
    pub candidates: Vec<CandidateForecast>,
    pub reason: String,
}

/// One trained model per node kind.
#[derive(Debug, Clone)]
pub struct RatPredictors {
    pub bs: PredictorModel,
    pub ap: PredictorModel,
}

impl RatPredictors {
    pub fn for_kind(&self, kind: NodeKind) -> &PredictorModel {
        match kind {
            NodeKind::CellularBs => &self.bs,
            NodeKind::WifiAp => &self.ap,
        }
    }

    /// Forecast steps available from both models.
    pub fn horizon(&self) -> usize {
        self.bs.horizon.min(self.ap.horizon)
    }

    /// History length needed before every node is ready.
    pub fn max_window(&self) -> usize {
        self.bs.window.max(self.ap.window)
    }
}

/// Consecutive-instant counters for the dwell-timer mode.
pub type DwellCounters = BTreeMap<NodeId, usize>;

/// Forecasts every ready node of `ue` and applies the trigger. Nodes whose
/// window is not ready are skipped; a serving node that is not ready yields
/// `Stay`.
pub fn decide(
    store: &MeasurementStore,
    predictors: &RatPredictors,
    ue: usize,
    serving: NodeId,
    cfg: &TriggerConfig,
    dwell: &mut DwellCounters,
    exec: Execution,
) -> Result<SteeringDecision> {
    cfg.validate()?;
    let needed = cfg.horizons_needed();
    if predictors.horizon() < needed {
        return Err(Error::invalid(format!(
            "trigger inspects {needed} forecast steps, models emit {}",
            predictors.horizon()
        )));
    }
    let step = store.latest_step(ue, serving).unwrap_or(0);
    let nodes = store.nodes(ue);
    let forecasts: Vec<Option<(NodeId, Vec<f64>)>> = exec.try_map(&nodes, |&node| {
        let model = predictors.for_kind(node.kind);
        match store.assemble(ue, node, model.window, &model.norm, model.feature_set) {
            Assembled::NotReady { .. } => Ok(None),
            Assembled::Ready(w) => {
                let mut v = model.predict_direct(node, step, w.view())?.values;
                v.truncate(predictors.horizon());
                Ok::<_, Error>(Some((node, v)))
            }
        }
    })?;
    let forecasts: Vec<(NodeId, Vec<f64>)> = forecasts.into_iter().flatten().collect();
    let Some(serving_pred) = forecasts.iter().find(|(n, _)| *n == serving).map(|(_, v)| v.clone()) else {
        dwell.clear();
        return Ok(SteeringDecision {
            step,
            serving,
            target: None,
            action: Action::Stay,
            candidates: Vec::new(),
            reason: "serving window not ready".into(),
        });
    };

    let mut candidates = Vec::with_capacity(forecasts.len());
    for (node, pred) in forecasts {
        let delta: Vec<f64> = pred.iter().zip(&serving_pred).map(|(c, s)| c - s).collect();
        let held = dwell.get(&node).copied().unwrap_or(0);
        let soft_ok = TriggerConfig::soft(cfg.delta_qos_db).holds(&delta, 0);
        let triggered = node != serving && cfg.holds(&delta, held);
        if node != serving && soft_ok {
            dwell.insert(node, held + 1);
        } else {
            dwell.remove(&node);
        }
        candidates.push(CandidateForecast {
            node,
            predicted_db: pred,
            delta_db: delta,
            triggered,
        });
    }

    // best next-step prediction among triggered nodes; node order breaks ties
    let mut best: Option<&CandidateForecast> = None;
    for c in candidates.iter().filter(|c| c.triggered) {
        if best.is_none_or(|b| c.predicted_db[0] > b.predicted_db[0]) {
            best = Some(c);
        }
    }
    let (action, target, reason) = match best {
        None => (Action::Stay, None, "no candidate meets the trigger".to_string()),
        Some(b) if b.predicted_db[0] <= serving_pred[0] => (
            Action::Stay,
            None,
            format!("{} ties the serving forecast", b.node),
        ),
        Some(b) => (
            Action::Handover,
            Some(b.node),
            format!("{} margin {:.3} dB >= {:.3} dB", b.node, b.delta_db[0], cfg.delta_qos_db),
        ),
    };
    if action == Action::Handover {
        dwell.clear();
    }
    Ok(SteeringDecision {
        step,
        serving,
        target,
        action,
        candidates,
        reason,
    })
}
