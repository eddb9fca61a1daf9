//! Multi-RAT deployment geometry: cellular BSs with WiFi APs inside their
//! coverage.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{dbm_to_watts, watts_to_dbm};
use crate::rng::substream;
use crate::{Error, Result};

/// RSSI floor (dBm) defining the coverage disc of a BS.
pub const COVERAGE_RSSI_FLOOR_DBM: f64 = -100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    CellularBs,
    WifiAp,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::CellularBs => "bs",
            NodeKind::WifiAp => "ap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bs" => Some(NodeKind::CellularBs),
            "ap" => Some(NodeKind::WifiAp),
            _ => None,
        }
    }
}

/// A transmitter in the topology. Ordering is `(kind, index)`, BSs first; the
/// ordering doubles as the tie-break rule wherever nodes are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: usize,
}

impl NodeId {
    pub const fn bs(index: usize) -> Self {
        NodeId {
            kind: NodeKind::CellularBs,
            index,
        }
    }

    pub const fn ap(index: usize) -> Self {
        NodeId {
            kind: NodeKind::WifiAp,
            index,
        }
    }

    pub fn is_bs(&self) -> bool {
        self.kind == NodeKind::CellularBs
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NodeKind::CellularBs => write!(f, "BS{}", self.index),
            NodeKind::WifiAp => write!(f, "AP{}", self.index),
        }
    }
}

impl std::str::FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Schema(format!("bad node id `{s}`"));
        let (kind, rest) = if let Some(r) = s.strip_prefix("BS") {
            (NodeKind::CellularBs, r)
        } else if let Some(r) = s.strip_prefix("AP") {
            (NodeKind::WifiAp, r)
        } else {
            return Err(bad());
        };
        let index = rest.parse().map_err(|_| bad())?;
        Ok(NodeId { kind, index })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle `[0, width] x [0, height]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsConfig {
    pub position: Point,
    pub tx_power_w: f64,
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    /// Path-loss exponent of `G(d) = K d^-alpha`.
    pub pathloss_exponent: f64,
    /// Scaling constant `K` of `G(d) = K d^-alpha`.
    pub pathloss_scale: f64,
    pub rician_k_db: f64,
}

impl BsConfig {
    /// Distance at which the mean received power falls to `floor_dbm`.
    pub fn coverage_radius(&self, floor_dbm: f64) -> f64 {
        (self.tx_power_w * self.pathloss_scale / dbm_to_watts(floor_dbm))
            .powf(1.0 / self.pathloss_exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApConfig {
    pub position: Point,
    pub tx_power_w: f64,
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    /// `PL(d0)` in dB.
    pub ref_pathloss_db: f64,
    /// `d0` in meters.
    pub ref_distance_m: f64,
    /// Indoor path-loss exponent.
    pub indoor_exponent: f64,
    /// Per-obstacle penetration losses (dB).
    pub obstacle_losses_db: Vec<f64>,
    pub channel_index: u32,
    /// Index of the BS whose coverage hosts this AP.
    pub parent_bs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub area: Area,
    pub bs_list: Vec<BsConfig>,
    pub ap_list: Vec<ApConfig>,
}

impl NetworkTopology {
    pub fn n_bs(&self) -> usize {
        self.bs_list.len()
    }

    pub fn n_ap(&self) -> usize {
        self.ap_list.len()
    }

    /// All node ids in `(kind, index)` order.
    pub fn node_ids(&self) -> Vec<NodeId> {
        (0..self.n_bs())
            .map(NodeId::bs)
            .chain((0..self.n_ap()).map(NodeId::ap))
            .collect()
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        match id.kind {
            NodeKind::CellularBs => id.index < self.n_bs(),
            NodeKind::WifiAp => id.index < self.n_ap(),
        }
    }

    pub fn position(&self, id: NodeId) -> Point {
        match id.kind {
            NodeKind::CellularBs => self.bs_list[id.index].position,
            NodeKind::WifiAp => self.ap_list[id.index].position,
        }
    }

    pub fn bandwidth(&self, id: NodeId) -> f64 {
        match id.kind {
            NodeKind::CellularBs => self.bs_list[id.index].bandwidth_hz,
            NodeKind::WifiAp => self.ap_list[id.index].bandwidth_hz,
        }
    }

    /// True if `p` lies inside the coverage disc of BS `bs`.
    pub fn in_bs_coverage(&self, bs: usize, p: &Point) -> bool {
        let cfg = &self.bs_list[bs];
        cfg.position.distance(p) <= cfg.coverage_radius(COVERAGE_RSSI_FLOOR_DBM)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTopology(m));
        if self.bs_list.is_empty() {
            return bad("at least one BS is required".into());
        }
        if !(self.area.width > 0.0 && self.area.height > 0.0) {
            return bad("area must have positive extent".into());
        }
        for (i, bs) in self.bs_list.iter().enumerate() {
            if !(bs.tx_power_w > 0.0 && bs.pathloss_exponent > 0.0 && bs.bandwidth_hz > 0.0) {
                return bad(format!("BS{i}: tx power, exponent and bandwidth must be positive"));
            }
            if !(bs.pathloss_scale > 0.0) {
                return bad(format!("BS{i}: path-loss scale must be positive"));
            }
            if !self.area.contains(&bs.position) {
                return bad(format!("BS{i} lies outside the area"));
            }
        }
        for (i, ap) in self.ap_list.iter().enumerate() {
            if !(ap.ref_distance_m > 0.0 && ap.indoor_exponent > 0.0) {
                return bad(format!("AP{i}: d0 and indoor exponent must be positive"));
            }
            if !(ap.tx_power_w > 0.0 && ap.bandwidth_hz > 0.0) {
                return bad(format!("AP{i}: tx power and bandwidth must be positive"));
            }
            if ap.obstacle_losses_db.iter().any(|l| !(*l >= 0.0)) {
                return bad(format!("AP{i}: obstacle losses must be non-negative"));
            }
            if !self.area.contains(&ap.position) {
                return bad(format!("AP{i} lies outside the area"));
            }
            if !(0..self.n_bs()).any(|b| self.in_bs_coverage(b, &ap.position)) {
                return bad(format!("AP{i} is outside every BS coverage disc"));
            }
            for (j, other) in self.ap_list.iter().enumerate().skip(i + 1) {
                if other.parent_bs == ap.parent_bs && other.channel_index == ap.channel_index {
                    return bad(format!(
                        "AP{i} and AP{j} share channel {} under BS{}",
                        ap.channel_index, ap.parent_bs
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Tunable knobs of the default two-BS / four-AP deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyParams {
    pub area_width_m: f64,
    pub area_height_m: f64,
    pub bs_spacing_m: f64,
    pub bs_tx_power_dbm: f64,
    pub bs_carrier_hz: f64,
    pub bs_bandwidth_hz: f64,
    pub bs_pathloss_exponent: f64,
    /// `K` is chosen so that mean RSSI at `bs_ref_distance_m` equals this value.
    pub bs_ref_rssi_dbm: f64,
    pub bs_ref_distance_m: f64,
    pub rician_k_db: f64,
    pub aps_per_bs: usize,
    pub ap_tx_power_dbm: f64,
    pub ap_carrier_hz: f64,
    pub ap_bandwidth_hz: f64,
    pub ap_ref_pathloss_db: f64,
    pub ap_ref_distance_m: f64,
    pub ap_indoor_exponent: f64,
    pub ap_obstacle_losses_db: Vec<f64>,
    /// AP distance from its parent BS is drawn from this range.
    pub ap_min_offset_m: f64,
    pub ap_max_offset_m: f64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        TopologyParams {
            area_width_m: 400.0,
            area_height_m: 200.0,
            bs_spacing_m: 180.0,
            bs_tx_power_dbm: 40.0,
            bs_carrier_hz: 3.5e9,
            bs_bandwidth_hz: 20e6,
            bs_pathloss_exponent: 3.5,
            bs_ref_rssi_dbm: -70.0,
            bs_ref_distance_m: 50.0,
            rician_k_db: 6.0,
            aps_per_bs: 2,
            ap_tx_power_dbm: 20.0,
            ap_carrier_hz: 2.4e9,
            ap_bandwidth_hz: 20e6,
            // free-space loss at 1 m for 2.4 GHz
            ap_ref_pathloss_db: 40.05,
            ap_ref_distance_m: 1.0,
            ap_indoor_exponent: 3.0,
            ap_obstacle_losses_db: vec![5.0],
            ap_min_offset_m: 35.0,
            ap_max_offset_m: 75.0,
        }
    }
}

/// 2.4 GHz non-overlapping channels.
const WIFI_CHANNELS: [u32; 3] = [1, 6, 11];

/// `K` such that `P_t K d_ref^-alpha` equals `ref_rssi_dbm`.
pub fn pathloss_scale_for(ref_rssi_dbm: f64, ref_distance: f64, tx_power_w: f64, alpha: f64) -> f64 {
    dbm_to_watts(ref_rssi_dbm) / (tx_power_w * ref_distance.powf(-alpha))
}

pub fn build_default_topology(seed: u64) -> NetworkTopology {
    build_topology(&TopologyParams::default(), seed).expect("default topology parameters are valid")
}

/// Places `2` BSs symmetrically about the area center and `aps_per_bs` APs
/// around each at seeded random bearings and offsets.
pub fn build_topology(p: &TopologyParams, seed: u64) -> Result<NetworkTopology> {
    if p.aps_per_bs > WIFI_CHANNELS.len() {
        return Err(Error::invalid(format!(
            "at most {} orthogonal APs per BS",
            WIFI_CHANNELS.len()
        )));
    }
    let area = Area {
        width: p.area_width_m,
        height: p.area_height_m,
    };
    let cx = area.width / 2.0;
    let cy = area.height / 2.0;
    let bs_tx = dbm_to_watts(p.bs_tx_power_dbm);
    let scale = pathloss_scale_for(p.bs_ref_rssi_dbm, p.bs_ref_distance_m, bs_tx, p.bs_pathloss_exponent);
    let bs_list: Vec<BsConfig> = [-0.5, 0.5]
        .iter()
        .map(|side| BsConfig {
            position: Point::new(cx + side * p.bs_spacing_m, cy),
            tx_power_w: bs_tx,
            carrier_freq_hz: p.bs_carrier_hz,
            bandwidth_hz: p.bs_bandwidth_hz,
            pathloss_exponent: p.bs_pathloss_exponent,
            pathloss_scale: scale,
            rician_k_db: p.rician_k_db,
        })
        .collect();

    let mut rng = substream(seed, "topology", &[]);
    let margin = 10.0;
    let mut ap_list = Vec::new();
    for (b, bs) in bs_list.iter().enumerate() {
        let radius = bs.coverage_radius(COVERAGE_RSSI_FLOOR_DBM);
        // spread the APs of one BS over distinct angular sectors
        let sector = std::f64::consts::TAU / p.aps_per_bs as f64;
        for a in 0..p.aps_per_bs {
            let mut placed = None;
            for _ in 0..1000 {
                let theta = sector * (a as f64 + rng.random_range(0.15..0.85));
                let r = rng.random_range(p.ap_min_offset_m..=p.ap_max_offset_m).min(radius);
                let pos = Point::new(bs.position.x + r * theta.cos(), bs.position.y + r * theta.sin());
                let inner = pos.x >= margin
                    && pos.x <= area.width - margin
                    && pos.y >= margin
                    && pos.y <= area.height - margin;
                if inner {
                    placed = Some(pos);
                    break;
                }
            }
            let position = placed.ok_or_else(|| {
                Error::InvalidTopology(format!("cannot place AP {a} of BS{b} inside the area"))
            })?;
            ap_list.push(ApConfig {
                position,
                tx_power_w: dbm_to_watts(p.ap_tx_power_dbm),
                carrier_freq_hz: p.ap_carrier_hz,
                bandwidth_hz: p.ap_bandwidth_hz,
                ref_pathloss_db: p.ap_ref_pathloss_db,
                ref_distance_m: p.ap_ref_distance_m,
                indoor_exponent: p.ap_indoor_exponent,
                obstacle_losses_db: p.ap_obstacle_losses_db.clone(),
                channel_index: WIFI_CHANNELS[a],
                parent_bs: b,
            });
        }
    }
    let topo = NetworkTopology {
        area,
        bs_list,
        ap_list,
    };
    topo.validate()?;
    log::debug!(
        "built topology: {} BSs, {} APs, BS K = {:.3e} ({:.1} dB)",
        topo.n_bs(),
        topo.n_ap(),
        scale,
        watts_to_dbm(scale) - 30.0
    );
    Ok(topo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_topology_shape() {
        let t = build_default_topology(7);
        assert_eq!(t.n_bs(), 2);
        assert_eq!(t.n_ap(), 4);
        assert!(t.bs_list.iter().all(|b| b.carrier_freq_hz == 3.5e9));
        assert!(t.ap_list.iter().all(|a| a.carrier_freq_hz == 2.4e9));
        assert_eq!(t, build_default_topology(7));
        assert_ne!(t, build_default_topology(8));
    }

    #[test]
    fn aps_lie_in_parent_coverage_by_independent_radius() {
        let t = build_default_topology(7);
        for ap in &t.ap_list {
            let bs = &t.bs_list[ap.parent_bs];
            // mean RSSI from G(d) = K d^-alpha, in dBm, compared with the floor
            let d = bs.position.distance(&ap.position).max(1.0);
            let rssi = 10.0 * (bs.tx_power_w * bs.pathloss_scale * d.powf(-bs.pathloss_exponent) / 1e-3).log10();
            assert!(rssi >= -100.0, "AP at {d} m has rssi {rssi}");
        }
    }

    #[test]
    fn reference_rssi_calibration() {
        let t = build_default_topology(1);
        let bs = &t.bs_list[0];
        let rx = bs.tx_power_w * bs.pathloss_scale * 50f64.powf(-3.5);
        assert!((watts_to_dbm(rx) + 70.0).abs() < 1e-9);
    }

    #[test]
    fn validate_rejects_bad_topologies() {
        let mut t = build_default_topology(3);
        t.ap_list[1].channel_index = t.ap_list[0].channel_index;
        assert!(t.validate().is_err());

        let mut t = build_default_topology(3);
        t.bs_list.clear();
        assert!(matches!(t.validate(), Err(Error::InvalidTopology(_))));

        let mut t = build_default_topology(3);
        t.ap_list[0].obstacle_losses_db.push(-1.0);
        assert!(t.validate().is_err());
    }

    #[test]
    fn node_id_order_and_parse() {
        assert!(NodeId::bs(5) < NodeId::ap(0));
        assert!(NodeId::ap(0) < NodeId::ap(1));
        let id: NodeId = "AP3".parse().unwrap();
        assert_eq!(id, NodeId::ap(3));
        assert_eq!(NodeId::bs(1).to_string(), "BS1");
        assert!("XX1".parse::<NodeId>().is_err());
    }
}
