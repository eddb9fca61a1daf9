//! Walks UEs along trajectories and records per-node measurement traces.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{
    cellular_pathloss_gain, cellular_sinr, draw_rician, linear_to_db, rssi_dbm, wifi_pathloss_db,
    wifi_snr, LinkBudget, NoiseModel,
};
use crate::exec::Execution;
use crate::mobility::Trajectory;
use crate::rng::substream;
use crate::topology::{NetworkTopology, NodeId, NodeKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    pub noise_density_dbm_hz: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            noise_density_dbm_hz: -174.0,
        }
    }
}

/// One measurement report: `(RSSI, SINR-or-SNR, throughput)` of `node` at `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementTuple {
    pub traj_id: usize,
    pub step: usize,
    pub node: NodeId,
    pub rssi_dbm: f64,
    /// SINR for BSs, SNR for APs, in dB.
    pub sig_quality_db: f64,
    pub throughput_bps: f64,
}

/// Time-aligned measurement series of every node along one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub traj_id: usize,
    pub nodes: Vec<NodeId>,
    /// `series[i][k]` is the tuple of `nodes[i]` at step `k`.
    pub series: Vec<Vec<MeasurementTuple>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node_series(&self, node: NodeId) -> Option<&[MeasurementTuple]> {
        self.nodes
            .iter()
            .position(|n| *n == node)
            .map(|i| self.series[i].as_slice())
    }

    /// All tuples at step `k`, in node order.
    pub fn step(&self, k: usize) -> impl Iterator<Item = &MeasurementTuple> + '_ {
        self.series.iter().map(move |s| &s[k])
    }
}

/// Shannon rate `B log2(1 + x)` for a linear quality ratio.
pub fn shannon_throughput(bandwidth_hz: f64, linear_quality: f64) -> f64 {
    bandwidth_hz * (1.0 + linear_quality).log2()
}

/// Simulates one trajectory. Each BS owns a fading substream keyed by
/// `(traj_id, bs_index)`; fading is redrawn independently at every step.
pub fn simulate_trace(
    topology: &NetworkTopology,
    trajectory: &Trajectory,
    radio: &RadioConfig,
    seed: u64,
) -> Result<Trace> {
    let nodes = topology.node_ids();
    if nodes.is_empty() {
        return Err(Error::InvalidTopology("topology has no nodes".into()));
    }
    let traj_id = trajectory.id;
    let mut fading_rngs: Vec<_> = (0..topology.n_bs())
        .map(|b| substream(seed, "fading", &[traj_id as u64, b as u64]))
        .collect();
    let bs_noise: Vec<NoiseModel> = topology
        .bs_list
        .iter()
        .map(|b| NoiseModel::from_dbm_per_hz(radio.noise_density_dbm_hz, b.bandwidth_hz))
        .collect();
    let ap_noise: Vec<NoiseModel> = topology
        .ap_list
        .iter()
        .map(|a| NoiseModel::from_dbm_per_hz(radio.noise_density_dbm_hz, a.bandwidth_hz))
        .collect();

    let mut series: Vec<Vec<MeasurementTuple>> =
        nodes.iter().map(|_| Vec::with_capacity(trajectory.len())).collect();
    let mut budgets = Vec::with_capacity(topology.n_bs());
    for (step, ue) in trajectory.points.iter().enumerate() {
        budgets.clear();
        for (b, bs) in topology.bs_list.iter().enumerate() {
            let gain = cellular_pathloss_gain(
                bs.position.distance(ue),
                bs.pathloss_scale,
                bs.pathloss_exponent,
            );
            let fading = draw_rician(bs.rician_k_db, &mut fading_rngs[b]).power();
            budgets.push(LinkBudget::new(bs.tx_power_w, gain, fading));
        }
        let mut interferers = Vec::with_capacity(budgets.len());
        for (b, bs) in topology.bs_list.iter().enumerate() {
            interferers.clear();
            interferers.extend(
                budgets
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != b)
                    .map(|(_, l)| *l),
            );
            let sinr = cellular_sinr(&budgets[b], &interferers, &bs_noise[b]);
            series[b].push(MeasurementTuple {
                traj_id,
                step,
                node: NodeId::bs(b),
                rssi_dbm: rssi_dbm(budgets[b].rx_power_w),
                sig_quality_db: linear_to_db(sinr),
                throughput_bps: shannon_throughput(bs.bandwidth_hz, sinr),
            });
        }
        for (a, ap) in topology.ap_list.iter().enumerate() {
            let pl_db = wifi_pathloss_db(ap.position.distance(ue), ap);
            let link = LinkBudget::deterministic(ap.tx_power_w, 10f64.powf(-pl_db / 10.0));
            let snr = wifi_snr(&link, &ap_noise[a]);
            series[topology.n_bs() + a].push(MeasurementTuple {
                traj_id,
                step,
                node: NodeId::ap(a),
                rssi_dbm: rssi_dbm(link.rx_power_w),
                sig_quality_db: linear_to_db(snr),
                throughput_bps: shannon_throughput(ap.bandwidth_hz, snr),
            });
        }
    }
    Ok(Trace {
        traj_id,
        nodes,
        series,
    })
}

/// One trace per trajectory, simulated independently.
pub fn simulate_campaign(
    topology: &NetworkTopology,
    trajectories: &[Trajectory],
    radio: &RadioConfig,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Trace>> {
    if trajectories.is_empty() {
        return Err(Error::invalid("campaign needs at least one trajectory"));
    }
    exec.try_map(trajectories, |t| simulate_trace(topology, t, radio, seed))
}

/// Per-step best node by signal quality; ties go to the lower `NodeId`.
pub fn best_server_timeline(trace: &Trace) -> Vec<NodeId> {
    (0..trace.len())
        .map(|k| {
            let mut best = &trace.series[0][k];
            for t in trace.step(k).skip(1) {
                if t.sig_quality_db > best.sig_quality_db
                    || (t.sig_quality_db == best.sig_quality_db && t.node < best.node)
                {
                    best = t;
                }
            }
            best.node
        })
        .collect()
}

const TRACE_HEADER: [&str; 7] = [
    "traj_id",
    "step",
    "node_kind",
    "node_index",
    "rssi_dbm",
    "sig_quality_db",
    "throughput_bps",
];

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the rows of nodes of `kind` for every trace.
pub fn write_traces_csv<W: Write>(out: W, traces: &[Trace], kind: NodeKind) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for trace in traces {
        for k in 0..trace.len() {
            for t in trace.step(k).filter(|t| t.node.kind == kind) {
                w.write_record(&[
                    t.traj_id.to_string(),
                    t.step.to_string(),
                    t.node.kind.as_str().to_string(),
                    t.node.index.to_string(),
                    fmt_f64(t.rssi_dbm),
                    fmt_f64(t.sig_quality_db),
                    fmt_f64(t.throughput_bps),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Reads BS and AP trace files back into aligned traces.
pub fn read_traces_csv<R1: Read, R2: Read>(bs: R1, ap: R2) -> Result<Vec<Trace>> {
    let mut by_traj: HashMap<usize, HashMap<NodeId, Vec<MeasurementTuple>>> = HashMap::new();
    for reader in [Box::new(bs) as Box<dyn Read>, Box::new(ap)] {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.into()))
        };
        let idx: Vec<usize> = TRACE_HEADER.iter().map(|h| col(h)).collect::<Result<_>>()?;
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| &rec[idx[i]];
            let num = |i: usize| -> Result<f64> {
                field(i)
                    .parse()
                    .map_err(|_| Error::Schema(format!("bad number `{}`", field(i))))
            };
            let int = |i: usize| -> Result<usize> {
                field(i)
                    .parse()
                    .map_err(|_| Error::Schema(format!("bad integer `{}`", field(i))))
            };
            let kind = NodeKind::parse(field(2))
                .ok_or_else(|| Error::Schema(format!("bad node kind `{}`", field(2))))?;
            let node = NodeId {
                kind,
                index: int(3)?,
            };
            let t = MeasurementTuple {
                traj_id: int(0)?,
                step: int(1)?,
                node,
                rssi_dbm: num(4)?,
                sig_quality_db: num(5)?,
                throughput_bps: num(6)?,
            };
            by_traj
                .entry(t.traj_id)
                .or_default()
                .entry(node)
                .or_default()
                .push(t);
        }
    }
    let mut ids: Vec<usize> = by_traj.keys().copied().collect();
    ids.sort_unstable();
    let mut traces = Vec::with_capacity(ids.len());
    for id in ids {
        let mut per_node: Vec<(NodeId, Vec<MeasurementTuple>)> =
            by_traj.remove(&id).unwrap_or_default().into_iter().collect();
        per_node.sort_by_key(|(n, _)| *n);
        let len = per_node[0].1.len();
        for (node, s) in &mut per_node {
            s.sort_by_key(|t| t.step);
            let contiguous = s.iter().enumerate().all(|(k, t)| t.step == k);
            if s.len() != len || !contiguous {
                return Err(Error::Schema(format!(
                    "trajectory {id}: series of {node} is not aligned"
                )));
            }
        }
        traces.push(Trace {
            traj_id: id,
            nodes: per_node.iter().map(|(n, _)| *n).collect(),
            series: per_node.into_iter().map(|(_, s)| s).collect(),
        });
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{db_to_linear, dbm_to_watts};
    use crate::mobility::{generate_trajectory_set, trajectory_from_waypoints, TrajectoryParams};
    use crate::topology::{build_default_topology, Area, BsConfig, Point};

    fn bs_at(x: f64, y: f64, k_db: f64) -> BsConfig {
        BsConfig {
            position: Point::new(x, y),
            tx_power_w: 10.0,
            carrier_freq_hz: 3.5e9,
            bandwidth_hz: 20e6,
            pathloss_exponent: 3.5,
            pathloss_scale: 8.84e-6,
            rician_k_db: k_db,
        }
    }

    fn line(area: &Area, y: f64) -> Trajectory {
        trajectory_from_waypoints(0, &[Point::new(5.0, y), Point::new(area.width - 5.0, y)], 3.0, 1.0, area)
            .unwrap()
    }

    #[test]
    fn standing_at_bs_is_best_bs() {
        let mut topo = build_default_topology(7);
        let bs0 = topo.bs_list[0].position;
        topo.area = Area { width: 400.0, height: 200.0 };
        let traj = Trajectory {
            id: 0,
            points: vec![bs0; 30],
            sample_interval: 1.0,
            speed: 3.0,
        };
        let tr = simulate_trace(&topo, &traj, &RadioConfig::default(), 3).unwrap();
        let s0 = tr.node_series(NodeId::bs(0)).unwrap();
        let s1 = tr.node_series(NodeId::bs(1)).unwrap();
        assert!(s0.iter().zip(s1).all(|(a, b)| a.rssi_dbm > b.rssi_dbm));
    }

    #[test]
    fn co_located_bs_pair_gives_unit_sinr() {
        let area = Area { width: 200.0, height: 100.0 };
        let topo = NetworkTopology {
            area,
            bs_list: vec![bs_at(100.0, 50.0, 200.0), bs_at(100.0, 50.0, 200.0)],
            ap_list: vec![],
        };
        let tr = simulate_trace(&topo, &line(&area, 60.0), &RadioConfig { noise_density_dbm_hz: -300.0 }, 1).unwrap();
        for s in &tr.series {
            for t in s {
                assert!(t.sig_quality_db.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_bs_matches_closed_form_snr() {
        let area = Area { width: 300.0, height: 100.0 };
        let bs = bs_at(0.0, 50.0, 300.0);
        let topo = NetworkTopology { area, bs_list: vec![bs.clone()], ap_list: vec![] };
        let traj = line(&area, 50.0);
        let tr = simulate_trace(&topo, &traj, &RadioConfig::default(), 1).unwrap();
        let noise = dbm_to_watts(-174.0) * 20e6;
        for k in [0usize, 20, 60] {
            let d = traj.points[k].distance(&bs.position).max(1.0);
            let snr = bs.tx_power_w * bs.pathloss_scale * d.powf(-3.5) / noise;
            let t = tr.series[0][k];
            assert!((t.sig_quality_db - 10.0 * snr.log10()).abs() < 1e-9);
            assert!((db_to_linear(t.sig_quality_db) / snr - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn campaign_alignment_throughput_and_isolation() {
        let topo = build_default_topology(7);
        let trajs = generate_trajectory_set(&topo, 4, &TrajectoryParams::default(), 2).unwrap();
        let radio = RadioConfig::default();
        let all = simulate_campaign(&topo, &trajs, &radio, 9, Execution::Parallel).unwrap();
        assert_eq!(all.len(), 4);
        for tr in &all {
            assert!(tr.series.iter().all(|s| s.len() == tr.len()));
            for s in &tr.series {
                for (k, t) in s.iter().enumerate() {
                    assert_eq!(t.step, k);
                    let b = topo.bandwidth(t.node);
                    let expect = b * (1.0 + db_to_linear(t.sig_quality_db)).log2();
                    assert!((t.throughput_bps / expect - 1.0).abs() < 1e-9);
                    assert!(t.rssi_dbm.is_finite() && t.sig_quality_db.is_finite());
                }
            }
        }
        let without = simulate_campaign(&topo, &[trajs[0].clone(), trajs[2].clone(), trajs[3].clone()], &radio, 9, Execution::Sequential).unwrap();
        assert_eq!(without[0], all[0]);
        assert_eq!(without[1], all[2]);
        assert_eq!(without[2], all[3]);
        assert!(simulate_campaign(&topo, &[], &radio, 9, Execution::Parallel).is_err());
    }

    #[test]
    fn empty_topology_rejected() {
        let area = Area { width: 10.0, height: 10.0 };
        let topo = NetworkTopology { area, bs_list: vec![], ap_list: vec![] };
        let t = Trajectory { id: 0, points: vec![Point::new(1.0, 1.0)], sample_interval: 1.0, speed: 1.0 };
        assert!(simulate_campaign(&topo, &[t], &RadioConfig::default(), 0, Execution::Sequential).is_err());
    }

    fn synthetic(values: &[Vec<f64>]) -> Trace {
        let nodes: Vec<NodeId> = (0..values.len()).map(NodeId::ap).collect();
        let series = values
            .iter()
            .zip(&nodes)
            .map(|(v, n)| {
                v.iter()
                    .enumerate()
                    .map(|(k, &q)| MeasurementTuple {
                        traj_id: 0,
                        step: k,
                        node: *n,
                        rssi_dbm: -60.0,
                        sig_quality_db: q,
                        throughput_bps: 1.0,
                    })
                    .collect()
            })
            .collect();
        Trace { traj_id: 0, nodes, series }
    }

    #[test]
    fn best_server_rules() {
        let one = synthetic(&[vec![1.0, 5.0, 2.0]]);
        assert_eq!(best_server_timeline(&one), vec![NodeId::ap(0); 3]);

        let a: Vec<f64> = (0..20).map(|k| 10.0 - k as f64 * 0.7).collect();
        let b: Vec<f64> = (0..20).map(|k| 2.0 + k as f64 * 0.4).collect();
        let tl = best_server_timeline(&synthetic(&[a.clone(), b.clone()]));
        // brute-force scan: first step where the challenger strictly exceeds
        let switch = (0..20).find(|&k| b[k] > a[k]).unwrap();
        for (k, n) in tl.iter().enumerate() {
            assert_eq!(*n, if k < switch { NodeId::ap(0) } else { NodeId::ap(1) });
        }

        let tie = synthetic(&[vec![3.0], vec![3.0]]);
        assert_eq!(best_server_timeline(&tie), vec![NodeId::ap(0)]);
    }

    #[test]
    fn trace_csv_round_trip() {
        let topo = build_default_topology(7);
        let trajs = generate_trajectory_set(&topo, 2, &TrajectoryParams::default(), 2).unwrap();
        let traces = simulate_campaign(&topo, &trajs, &RadioConfig::default(), 1, Execution::Parallel).unwrap();
        let mut bs = Vec::new();
        let mut ap = Vec::new();
        write_traces_csv(&mut bs, &traces, NodeKind::CellularBs).unwrap();
        write_traces_csv(&mut ap, &traces, NodeKind::WifiAp).unwrap();
        assert!(String::from_utf8_lossy(&bs).lines().skip(1).all(|l| l.contains(",bs,")));
        let back = read_traces_csv(bs.as_slice(), ap.as_slice()).unwrap();
        assert_eq!(back, traces);
    }
}
