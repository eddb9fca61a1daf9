//! Simulated handover execution: admission control and the signalling
//! state machine.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::topology::NodeId;

pub const DEFAULT_ADMISSION_CAPACITY: usize = 8;
/// Simulated time between consecutive signalling states, in steps.
pub const STATE_INTERVAL: f64 = 0.1;

/// Per-node count of attached UEs with an atomic check-and-increment.
#[derive(Debug)]
pub struct AdmissionControl {
    capacity: usize,
    load: BTreeMap<NodeId, AtomicUsize>,
}

impl AdmissionControl {
    pub fn new(nodes: &[NodeId], capacity: usize) -> Self {
        AdmissionControl {
            capacity,
            load: nodes.iter().map(|n| (*n, AtomicUsize::new(0))).collect(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn load(&self, node: NodeId) -> usize {
        self.load.get(&node).map_or(0, |c| c.load(Ordering::SeqCst))
    }

    /// Takes one slot on `node` if one is free.
    pub fn try_admit(&self, node: NodeId) -> bool {
        let Some(counter) = self.load.get(&node) else {
            return false;
        };
        counter
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < self.capacity).then_some(n + 1))
            .is_ok()
    }

    pub fn release(&self, node: NodeId) {
        if let Some(counter) = self.load.get(&node) {
            let _ = counter.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    AdmissionRejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoverState {
    Requested,
    AdmissionChecked,
    Acked,
    RrcReconfigured,
    Synced,
    StatusTransferred,
    Complete,
    Failed(FailureReason),
}

impl HandoverState {
    /// Non-terminal states in signalling order.
    pub const SEQUENCE: [HandoverState; 6] = [
        HandoverState::Requested,
        HandoverState::AdmissionChecked,
        HandoverState::Acked,
        HandoverState::RrcReconfigured,
        HandoverState::Synced,
        HandoverState::StatusTransferred,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HandoverState::Requested => "requested",
            HandoverState::AdmissionChecked => "admission_checked",
            HandoverState::Acked => "acked",
            HandoverState::RrcReconfigured => "rrc_reconfigured",
            HandoverState::Synced => "synced",
            HandoverState::StatusTransferred => "status_transferred",
            HandoverState::Complete => "complete",
            HandoverState::Failed(FailureReason::AdmissionRejected) => "failed_admission_rejected",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, HandoverState::Complete | HandoverState::Failed(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverEvent {
    pub step: usize,
    pub source: NodeId,
    pub target: NodeId,
    /// States with their simulated time in steps.
    pub log: Vec<(HandoverState, f64)>,
}

impl HandoverEvent {
    pub fn final_state(&self) -> HandoverState {
        self.log.last().expect("event log is never empty").0
    }

    pub fn completed(&self) -> bool {
        self.final_state() == HandoverState::Complete
    }

    /// Whether the log is a prefix of the signalling order ending in exactly
    /// one terminal state.
    pub fn is_well_ordered(&self) -> bool {
        let Some((last, body)) = self.log.split_last() else {
            return false;
        };
        last.0.is_terminal()
            && body.len() <= HandoverState::SEQUENCE.len()
            && body.iter().zip(HandoverState::SEQUENCE).all(|((s, _), e)| *s == e)
            && self.log.windows(2).all(|w| w[0].1 < w[1].1)
    }
}

/// Runs the signalling for a source-to-target handover decided at `step`.
/// On success the target slot is held and the source slot released; on
/// admission failure nothing changes.
pub fn execute_handover(admission: &AdmissionControl, step: usize, source: NodeId, target: NodeId) -> HandoverEvent {
    let mut log = Vec::with_capacity(7);
    let mut t = step as f64;
    let mut push = |s: HandoverState, log: &mut Vec<(HandoverState, f64)>| {
        log.push((s, t));
        t += STATE_INTERVAL;
    };
    push(HandoverState::Requested, &mut log);
    let admitted = admission.try_admit(target);
    push(HandoverState::AdmissionChecked, &mut log);
    if !admitted {
        push(HandoverState::Failed(FailureReason::AdmissionRejected), &mut log);
    } else {
        for s in &HandoverState::SEQUENCE[2..] {
            push(*s, &mut log);
        }
        push(HandoverState::Complete, &mut log);
        admission.release(source);
    }
    HandoverEvent {
        step,
        source,
        target,
        log,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn happy_path_logs_all_states() {
        let a = AdmissionControl::new(&[NodeId::bs(0), NodeId::ap(0)], DEFAULT_ADMISSION_CAPACITY);
        assert!(a.try_admit(NodeId::bs(0)));
        let e = execute_handover(&a, 12, NodeId::bs(0), NodeId::ap(0));
        assert!(e.completed());
        assert_eq!(e.log.len(), 7);
        assert!(e.is_well_ordered());
        assert_eq!(a.load(NodeId::ap(0)), 1);
        assert_eq!(a.load(NodeId::bs(0)), 0);
    }

    #[test]
    fn full_target_rejects() {
        let a = AdmissionControl::new(&[NodeId::bs(0), NodeId::bs(1)], 2);
        assert!(a.try_admit(NodeId::bs(0)));
        assert!(a.try_admit(NodeId::bs(1)));
        assert!(a.try_admit(NodeId::bs(1)));
        let e = execute_handover(&a, 3, NodeId::bs(0), NodeId::bs(1));
        assert_eq!(e.final_state(), HandoverState::Failed(FailureReason::AdmissionRejected));
        assert!(e.is_well_ordered());
        assert_eq!(e.log.len(), 3);
        assert_eq!(a.load(NodeId::bs(0)), 1);
        assert_eq!(a.load(NodeId::bs(1)), 2);
    }

    #[test]
    fn racing_for_last_slot_admits_exactly_one() {
        for _ in 0..50 {
            let a = Arc::new(AdmissionControl::new(&[NodeId::ap(0), NodeId::bs(0), NodeId::bs(1)], 1));
            let handles: Vec<_> = [NodeId::bs(0), NodeId::bs(1)]
                .into_iter()
                .map(|src| {
                    let a = Arc::clone(&a);
                    std::thread::spawn(move || execute_handover(&a, 0, src, NodeId::ap(0)).completed())
                })
                .collect();
            let done: usize = handles.into_iter().map(|h| h.join().unwrap() as usize).sum();
            assert_eq!(done, 1);
            assert_eq!(a.load(NodeId::ap(0)), 1);
        }
    }

    #[test]
    fn malformed_logs_are_detected() {
        let mut e = HandoverEvent {
            step: 0,
            source: NodeId::bs(0),
            target: NodeId::bs(1),
            log: vec![(HandoverState::Requested, 0.0), (HandoverState::Acked, 0.1), (HandoverState::Complete, 0.2)],
        };
        assert!(!e.is_well_ordered());
        e.log = vec![(HandoverState::Requested, 0.0)];
        assert!(!e.is_well_ordered());
    }
}
