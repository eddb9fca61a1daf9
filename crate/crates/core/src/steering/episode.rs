//! Step-by-step replay of one trace through the steering controller.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::handover::{execute_handover, AdmissionControl, HandoverEvent, HandoverState, DEFAULT_ADMISSION_CAPACITY};
use super::store::MeasurementStore;
use super::trigger::{decide, Action, DwellCounters, RatPredictors, SteeringDecision, TriggerConfig};
use crate::exec::Execution;
use crate::sim::{best_server_timeline, fmt_f64, Trace};
use crate::topology::NodeId;
use crate::{Error, Result};

pub const DEFAULT_PING_PONG_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub trigger: TriggerConfig,
    /// A return to the previous node within this many steps is a ping-pong.
    pub ping_pong_window: usize,
    pub admission_capacity: usize,
}

impl EpisodeConfig {
    pub fn new(trigger: TriggerConfig) -> Self {
        EpisodeConfig {
            trigger,
            ping_pong_window: DEFAULT_PING_PONG_WINDOW,
            admission_capacity: DEFAULT_ADMISSION_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub handovers: usize,
    pub failed_handovers: usize,
    pub ping_pongs: usize,
    pub mean_dwell_steps: f64,
    /// Fraction of attached steps served by the best actual node.
    pub oracle_agreement: f64,
    pub attached_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub traj_id: usize,
    pub decisions: Vec<SteeringDecision>,
    pub events: Vec<HandoverEvent>,
    /// Serving node per step; `None` until every window is ready.
    pub timeline: Vec<Option<NodeId>>,
    pub best_actual: Vec<NodeId>,
    pub metrics: EpisodeMetrics,
}

fn metrics(timeline: &[Option<NodeId>], best: &[NodeId], events: &[HandoverEvent], ping_pong_window: usize) -> EpisodeMetrics {
    let done: Vec<&HandoverEvent> = events.iter().filter(|e| e.completed()).collect();
    let ping_pongs = done
        .windows(2)
        .filter(|w| w[1].target == w[0].source && w[1].source == w[0].target && w[1].step - w[0].step <= ping_pong_window)
        .count();
    let attached: Vec<(usize, NodeId)> = timeline.iter().enumerate().filter_map(|(k, s)| s.map(|n| (k, n))).collect();
    let mut segments = 0usize;
    let mut prev = None;
    for (_, n) in &attached {
        if prev != Some(*n) {
            segments += 1;
            prev = Some(*n);
        }
    }
    let agree = attached.iter().filter(|(k, n)| best[*k] == *n).count();
    let n = attached.len();
    EpisodeMetrics {
        handovers: done.len(),
        failed_handovers: events.len() - done.len(),
        ping_pongs,
        mean_dwell_steps: if segments == 0 { 0.0 } else { n as f64 / segments as f64 },
        oracle_agreement: if n == 0 { 0.0 } else { agree as f64 / n as f64 },
        attached_steps: n,
    }
}

/// Replays `trace` through ingest, window assembly, decision and execution.
/// The UE attaches to the best actual node at the first step where every
/// node's window is ready; a decision at step `k` takes effect at `k+1`.
pub fn run_episode(
    trace: &Trace,
    predictors: &RatPredictors,
    cfg: &EpisodeConfig,
    admission: &AdmissionControl,
    exec: Execution,
) -> Result<Episode> {
    cfg.trigger.validate()?;
    if trace.is_empty() {
        return Err(Error::TraceTooShort { len: 0, required: 1 });
    }
    let ue = trace.traj_id;
    let best = best_server_timeline(trace);
    let mut store = MeasurementStore::new(predictors.max_window())?;
    let mut dwell = DwellCounters::new();
    let mut serving: Option<NodeId> = None;
    let mut timeline = Vec::with_capacity(trace.len());
    let mut decisions = Vec::new();
    let mut events = Vec::new();
    for k in 0..trace.len() {
        for t in trace.step(k) {
            store.ingest(ue, *t)?;
        }
        if serving.is_none() {
            let ready = trace
                .nodes
                .iter()
                .all(|n| store.len(ue, *n) >= predictors.for_kind(n.kind).window);
            if ready {
                if !admission.try_admit(best[k]) {
                    log::warn!("{} is full; UE {ue} attaches anyway", best[k]);
                }
                serving = Some(best[k]);
            }
        }
        timeline.push(serving);
        let Some(current) = serving else { continue };
        if k + 1 == trace.len() {
            break;
        }
        let d = decide(&store, predictors, ue, current, &cfg.trigger, &mut dwell, exec)?;
        if let (Action::Handover, Some(target)) = (d.action, d.target) {
            let e = execute_handover(admission, k, current, target);
            if e.completed() {
                serving = Some(target);
            }
            events.push(e);
        }
        decisions.push(d);
    }
    if let Some(s) = serving {
        admission.release(s);
    }
    let metrics = metrics(&timeline, &best, &events, cfg.ping_pong_window);
    Ok(Episode {
        traj_id: ue,
        decisions,
        events,
        timeline,
        best_actual: best,
        metrics,
    })
}

fn create(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

/// One row per decision with every node's forecast and margin per step.
/// Nodes without a ready window leave their cells empty.
pub fn write_decisions_csv(path: &Path, decisions: &[SteeringDecision], nodes: &[NodeId], horizon: usize) -> Result<()> {
    let mut w = create(path)?;
    let mut header: Vec<String> = ["step", "serving", "target", "action"].map(String::from).to_vec();
    for prefix in ["pred", "delta"] {
        for n in nodes {
            for h in 1..=horizon {
                header.push(format!("{prefix}_{n}_h{h}"));
            }
        }
    }
    header.push("reason".into());
    w.write_record(&header)?;
    for d in decisions {
        let mut row = vec![
            d.step.to_string(),
            d.serving.to_string(),
            d.target.map(|t| t.to_string()).unwrap_or_default(),
            match d.action {
                Action::Stay => "stay".into(),
                Action::Handover => "handover".into(),
            },
        ];
        for pick in [0, 1] {
            for n in nodes {
                let c = d.candidates.iter().find(|c| c.node == *n);
                for h in 0..horizon {
                    let v = c.and_then(|c| if pick == 0 { c.predicted_db.get(h) } else { c.delta_db.get(h) });
                    row.push(v.map(|v| fmt_f64(*v)).unwrap_or_default());
                }
            }
        }
        row.push(d.reason.clone());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One row per handover attempt with the simulated time of each state.
pub fn write_events_csv(path: &Path, events: &[HandoverEvent]) -> Result<()> {
    let mut w = create(path)?;
    let mut header: Vec<String> = ["step", "source", "target", "final_state"].map(String::from).to_vec();
    let states: Vec<&str> = HandoverState::SEQUENCE
        .iter()
        .map(|s| s.as_str())
        .chain(["complete", "failed"])
        .collect();
    header.extend(states.iter().map(|s| format!("t_{s}")));
    w.write_record(&header)?;
    for e in events {
        let mut row = vec![
            e.step.to_string(),
            e.source.to_string(),
            e.target.to_string(),
            e.final_state().as_str().to_string(),
        ];
        for s in &states {
            let t = e.log.iter().find(|(st, _)| match st {
                HandoverState::Failed(_) => *s == "failed",
                other => other.as_str() == *s,
            });
            row.push(t.map(|(_, t)| format!("{t:.1}")).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
