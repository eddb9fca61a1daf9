//! Trigger-threshold sweep of soft and hysteresis steering on a held-out path.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::sweeps::direct_key;
use super::{write_rows, Assertion, Context, ExperimentId, ModelKey};
use crate::exec::Execution;
use crate::sim::{best_server_timeline, Trace};
use crate::steering::{
    run_episode, write_decisions_csv, write_events_csv, AdmissionControl, Episode, EpisodeConfig, RatPredictors,
    TriggerConfig, TriggerMode,
};
use crate::topology::{NodeId, NodeKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountRow {
    pub delta_db: f64,
    pub mode: &'static str,
    pub n: usize,
    pub handovers: usize,
    pub failed_handovers: usize,
    pub ping_pongs: usize,
    pub mean_dwell_steps: f64,
    pub oracle_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineRow {
    pub step: usize,
    pub best_actual: String,
    pub soft: String,
    pub hysteresis: String,
}

#[derive(Debug, Clone)]
pub struct HandoverResult {
    pub held_out: usize,
    /// Why the held-out path was picked.
    pub held_out_note: String,
    pub counts: Vec<CountRow>,
    pub timeline: Vec<TimelineRow>,
    /// Soft and hysteresis episodes at the logged threshold.
    pub soft: Episode,
    pub hysteresis: Episode,
    pub nodes: Vec<NodeId>,
    pub horizon: usize,
    pub assertions: Vec<Assertion>,
}

impl HandoverResult {
    pub fn count(&self, mode: &str, n: usize, delta: f64) -> Option<usize> {
        self.counts
            .iter()
            .find(|r| r.mode == mode && r.n == n && r.delta_db == delta)
            .map(|r| r.handovers)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let files = [
            "handover_counts.csv",
            "handover_timeline.csv",
            "decisions_soft.csv",
            "decisions_hysteresis.csv",
            "events_soft.csv",
            "events_hysteresis.csv",
        ]
        .map(|f| dir.join(f));
        write_rows(&files[0], &self.counts)?;
        write_rows(&files[1], &self.timeline)?;
        write_decisions_csv(&files[2], &self.soft.decisions, &self.nodes, self.horizon)?;
        write_decisions_csv(&files[3], &self.hysteresis.decisions, &self.nodes, self.horizon)?;
        write_events_csv(&files[4], &self.soft.events)?;
        write_events_csv(&files[5], &self.hysteresis.events)?;
        Ok(files.to_vec())
    }
}

pub(crate) fn handover_models(ctx: &Context) -> Vec<ModelKey> {
    let mut keys = [NodeKind::CellularBs, NodeKind::WifiAp].map(|r| direct_key(ctx, r));
    for k in &mut keys {
        k.n_traj = ctx.cfg.handover.n_traj;
    }
    keys.to_vec()
}

fn visited(trace: &Trace) -> (usize, usize) {
    let best: BTreeSet<NodeId> = best_server_timeline(trace).into_iter().collect();
    let bs = best.iter().filter(|n| n.is_bs()).count();
    (bs, best.len() - bs)
}

/// First trajectory after the training set whose best server passes through
/// every BS and at least two APs; otherwise the one visiting most nodes.
pub fn pick_held_out(traces: &[Trace], first: usize, n_bs: usize) -> Result<(usize, String)> {
    let pool = traces
        .get(first..)
        .filter(|p| !p.is_empty())
        .ok_or_else(|| Error::invalid(format!("no trajectories after id {first}")))?;
    if let Some(t) = pool.iter().find(|t| {
        let (bs, ap) = visited(t);
        bs == n_bs && ap >= 2
    }) {
        let (bs, ap) = visited(t);
        return Ok((t.traj_id, format!("first path after training with {bs} BSs and {ap} APs as best server")));
    }
    let t = pool
        .iter()
        .rev()
        .max_by_key(|t| {
            let (bs, ap) = visited(t);
            bs + ap
        })
        .unwrap();
    let (bs, ap) = visited(t);
    Ok((t.traj_id, format!("no path covers every BS and two APs; using the widest ({bs} BSs, {ap} APs)")))
}

fn episode(trace: &Trace, predictors: &RatPredictors, ctx: &Context, trigger: TriggerConfig, exec: Execution) -> Result<Episode> {
    let h = &ctx.cfg.handover;
    let cfg = EpisodeConfig {
        trigger,
        ping_pong_window: h.ping_pong_window,
        admission_capacity: h.admission_capacity,
    };
    let admission = AdmissionControl::new(&trace.nodes, h.admission_capacity);
    run_episode(trace, predictors, &cfg, &admission, exec)
}

fn label(node: Option<NodeId>) -> String {
    node.map(|n| n.to_string()).unwrap_or_default()
}

pub fn exp_handover(ctx: &mut Context) -> Result<HandoverResult> {
    let keys = handover_models(ctx);
    ctx.ensure(&keys)?;
    let predictors = RatPredictors {
        bs: ctx.cache.get(&keys[0])?.clone(),
        ap: ctx.cache.get(&keys[1])?.clone(),
    };
    let h = ctx.cfg.handover.clone();
    let (held_out, held_out_note) = pick_held_out(&ctx.campaign.traces[..h.n_traj + h.held_out_pool], h.n_traj, ctx.campaign.topology.n_bs())?;
    let trace = &ctx.campaign.traces[held_out];

    // N=1 always runs: it must reproduce the soft episode
    let mut lengths = h.hysteresis_n.clone();
    if !lengths.contains(&1) {
        lengths.push(1);
    }
    let mut triggers = Vec::new();
    for &d in &h.deltas_db {
        triggers.push(TriggerConfig::soft(d));
        for &n in &lengths {
            triggers.push(TriggerConfig::hysteresis(d, n));
        }
    }
    let episodes = ctx.exec.try_map(&triggers, |t| episode(trace, &predictors, ctx, *t, Execution::Sequential))?;
    let find = |mode: TriggerMode, n: usize, d: f64| -> &Episode {
        let i = triggers
            .iter()
            .position(|t| t.mode == mode && (mode == TriggerMode::Soft || t.n == n) && t.delta_qos_db == d)
            .unwrap();
        &episodes[i]
    };

    let mut counts = Vec::new();
    for (t, e) in triggers.iter().zip(&episodes) {
        if t.mode == TriggerMode::Hysteresis && t.n == 1 && !h.hysteresis_n.contains(&1) {
            continue;
        }
        let m = &e.metrics;
        counts.push(CountRow {
            delta_db: t.delta_qos_db,
            mode: t.mode.as_str(),
            n: if t.mode == TriggerMode::Soft { 1 } else { t.n },
            handovers: m.handovers,
            failed_handovers: m.failed_handovers,
            ping_pongs: m.ping_pongs,
            mean_dwell_steps: m.mean_dwell_steps,
            oracle_agreement: m.oracle_agreement,
        });
    }

    let mut assertions = Vec::new();
    let mut sorted = h.deltas_db.clone();
    sorted.sort_by(f64::total_cmp);
    let mut series: Vec<(String, Vec<usize>)> =
        vec![("soft".into(), sorted.iter().map(|&d| find(TriggerMode::Soft, 1, d).metrics.handovers).collect())];
    for &n in &h.hysteresis_n {
        series.push((
            format!("hysteresis_n{n}"),
            sorted.iter().map(|&d| find(TriggerMode::Hysteresis, n, d).metrics.handovers).collect(),
        ));
    }
    for (name, c) in &series {
        assertions.push(Assertion::new(
            ExperimentId::Handover,
            format!("{name}_count_non_increasing"),
            c.windows(2).all(|p| p[1] <= p[0]),
            format!("{c:?}"),
        ));
    }
    let soft = &series[0].1;
    if let Some((_, hyst)) = series.iter().find(|(s, _)| *s == format!("hysteresis_n{}", h.plot_n)) {
        assertions.push(Assertion::new(
            ExperimentId::Handover,
            format!("hysteresis_n{}_at_most_soft", h.plot_n),
            hyst.iter().zip(soft).all(|(a, b)| a <= b),
            format!("{hyst:?} vs {soft:?}"),
        ));
    }
    let identical = sorted.iter().all(|&d| {
        let (s, one) = (find(TriggerMode::Soft, 1, d), find(TriggerMode::Hysteresis, 1, d));
        s.decisions == one.decisions && s.events == one.events && s.timeline == one.timeline
    });
    assertions.push(Assertion::new(
        ExperimentId::Handover,
        "hysteresis_n1_equals_soft",
        identical,
        format!("{} thresholds", sorted.len()),
    ));

    let soft_ep = episode(trace, &predictors, ctx, TriggerConfig::soft(h.plot_delta_db), ctx.exec)?;
    let hyst_ep = episode(trace, &predictors, ctx, TriggerConfig::hysteresis(h.plot_delta_db, h.plot_n), ctx.exec)?;
    let timeline: Vec<TimelineRow> = (0..trace.len())
        .map(|k| TimelineRow {
            step: k,
            best_actual: soft_ep.best_actual[k].to_string(),
            soft: label(soft_ep.timeline[k]),
            hysteresis: label(hyst_ep.timeline[k]),
        })
        .collect();
    let attached: Vec<&TimelineRow> = timeline.iter().filter(|r| !r.soft.is_empty()).collect();
    let agree = attached.iter().filter(|r| r.soft == r.hysteresis).count() as f64 / attached.len().max(1) as f64;
    assertions.push(Assertion::new(
        ExperimentId::Handover,
        format!("soft_hysteresis_agree_at_{}db", h.plot_delta_db),
        agree >= 0.7,
        format!("agreement {agree:.4} over {} steps", attached.len()),
    ));

    Ok(HandoverResult {
        held_out,
        held_out_note,
        counts,
        timeline,
        soft: soft_ep,
        hysteresis: hyst_ep,
        nodes: trace.nodes.clone(),
        horizon: predictors.horizon(),
        assertions,
    })
}
