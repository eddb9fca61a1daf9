//! Random UE trajectories: uniform waypoints joined by a centripetal
//! Catmull-Rom spline, resampled at constant speed.
//!
//! Consecutive samples are exactly `speed * sample_interval` apart in
//! straight-line distance and lie on the spline.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::substream;
use crate::topology::{Area, NetworkTopology, Point};
use crate::{Error, Result};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;
const MAX_REDRAWS: usize = 100;
/// Dense-sampling resolution used to bracket each step (m).
const DENSE_STEP_M: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    pub points: Vec<Point>,
    pub sample_interval: f64,
    pub speed: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn step_length(&self) -> f64 {
        self.speed * self.sample_interval
    }

    /// Largest relative deviation of a consecutive gap from the nominal step.
    pub fn max_spacing_error(&self) -> f64 {
        let s = self.step_length();
        self.points
            .windows(2)
            .map(|w| (w[0].distance(&w[1]) - s).abs() / s)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub n_waypoints: usize,
    pub speed: f64,
    pub sample_interval: f64,
    /// Minimum number of samples; shorter draws are rejected.
    pub min_points: usize,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        TrajectoryParams {
            n_waypoints: 6,
            speed: 3.0,
            sample_interval: 1.0,
            // W_max (15) + H_max (5) + 1
            min_points: 21,
        }
    }
}

impl TrajectoryParams {
    fn validate(&self) -> Result<()> {
        if self.n_waypoints < 2 {
            return Err(Error::invalid("n_waypoints must be at least 2"));
        }
        if !(self.speed > 0.0 && self.sample_interval > 0.0) {
            return Err(Error::invalid("speed and sample_interval must be positive"));
        }
        Ok(())
    }
}

/// Centripetal Catmull-Rom spline through a waypoint list.
#[derive(Debug, Clone)]
pub struct CentripetalSpline {
    /// Waypoints padded with one reflected phantom point at each end.
    ctrl: Vec<Point>,
    /// Knot values, one per control point.
    knots: Vec<f64>,
}

impl CentripetalSpline {
    /// Consecutive duplicate waypoints are merged; fewer than two distinct
    /// points is a zero-length path.
    pub fn new(waypoints: &[Point]) -> Result<Self> {
        let mut pts: Vec<Point> = Vec::with_capacity(waypoints.len() + 2);
        for p in waypoints {
            if pts.last().is_none_or(|q: &Point| q.distance(p) > 1e-9) {
                pts.push(*p);
            }
        }
        if pts.len() < 2 {
            return Err(Error::DegenerateTrajectory("zero-length path".into()));
        }
        let n = pts.len();
        let first = Point::new(2.0 * pts[0].x - pts[1].x, 2.0 * pts[0].y - pts[1].y);
        let last = Point::new(
            2.0 * pts[n - 1].x - pts[n - 2].x,
            2.0 * pts[n - 1].y - pts[n - 2].y,
        );
        pts.insert(0, first);
        pts.push(last);
        let mut knots = vec![0.0; pts.len()];
        for i in 1..pts.len() {
            knots[i] = knots[i - 1] + pts[i - 1].distance(&pts[i]).sqrt();
        }
        Ok(CentripetalSpline { ctrl: pts, knots })
    }

    pub fn segments(&self) -> usize {
        self.ctrl.len() - 3
    }

    /// Evaluates the curve at `u in [0, segments]`.
    pub fn eval(&self, u: f64) -> Point {
        let nseg = self.segments();
        let seg = (u.floor() as usize).min(nseg - 1);
        let s = (u - seg as f64).clamp(0.0, 1.0);
        let (p0, p1, p2, p3) = (
            self.ctrl[seg],
            self.ctrl[seg + 1],
            self.ctrl[seg + 2],
            self.ctrl[seg + 3],
        );
        let (t0, t1, t2, t3) = (
            self.knots[seg],
            self.knots[seg + 1],
            self.knots[seg + 2],
            self.knots[seg + 3],
        );
        let t = t1 + s * (t2 - t1);
        let lerp = |a: Point, b: Point, ta: f64, tb: f64| {
            let w = (t - ta) / (tb - ta);
            Point::new(a.x + w * (b.x - a.x), a.y + w * (b.y - a.y))
        };
        let a1 = lerp(p0, p1, t0, t1);
        let a2 = lerp(p1, p2, t1, t2);
        let a3 = lerp(p2, p3, t2, t3);
        let b1 = lerp(a1, a2, t0, t2);
        let b2 = lerp(a2, a3, t1, t3);
        lerp(b1, b2, t1, t2)
    }

    /// Dense `(u, point)` samples along the whole curve.
    fn dense(&self) -> Vec<(f64, Point)> {
        let mut out = Vec::new();
        for seg in 0..self.segments() {
            let chord = self.ctrl[seg + 1].distance(&self.ctrl[seg + 2]);
            let m = (chord / DENSE_STEP_M).ceil() as usize * 2 + 8;
            for j in 0..m {
                let u = seg as f64 + j as f64 / m as f64;
                out.push((u, self.eval(u)));
            }
        }
        let end = self.segments() as f64;
        out.push((end, self.eval(end)));
        out
    }
}

/// Result of resampling a spline at constant chord length.
struct Resampled {
    points: Vec<Point>,
    /// Whether every dense sample of the curve stays in the area.
    contained: bool,
}

fn resample(spline: &CentripetalSpline, step: f64, area: &Area) -> Resampled {
    let dense = spline.dense();
    let contained = dense.iter().all(|(_, p)| area.contains(p));
    let mut points = vec![dense[0].1];
    let mut cur_u = 0.0;
    let mut cur = dense[0].1;
    let mut j = 1;
    loop {
        while j < dense.len() && (dense[j].0 <= cur_u || dense[j].1.distance(&cur) < step) {
            j += 1;
        }
        if j >= dense.len() {
            break;
        }
        let mut lo = dense[j - 1].0.max(cur_u);
        let mut hi = dense[j].0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if spline.eval(mid).distance(&cur) < step {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // hi is the smallest bracketed parameter with chord >= step
        let next = spline.eval(hi);
        points.push(next);
        cur = next;
        cur_u = hi;
    }
    Resampled { points, contained }
}

/// Builds a trajectory through fixed waypoints.
pub fn trajectory_from_waypoints(
    id: usize,
    waypoints: &[Point],
    speed: f64,
    sample_interval: f64,
    area: &Area,
) -> Result<Trajectory> {
    if !(speed > 0.0 && sample_interval > 0.0) {
        return Err(Error::invalid("speed and sample_interval must be positive"));
    }
    let spline = CentripetalSpline::new(waypoints)?;
    let r = resample(&spline, speed * sample_interval, area);
    if !r.contained {
        return Err(Error::DegenerateTrajectory("interpolant leaves the area".into()));
    }
    if r.points.len() < 2 {
        return Err(Error::DegenerateTrajectory("path shorter than one step".into()));
    }
    Ok(Trajectory {
        id,
        points: r.points,
        sample_interval,
        speed,
    })
}

/// Draws a random constant-speed trajectory. Deterministic per `(id, seed)`.
pub fn generate_trajectory(
    topology: &NetworkTopology,
    id: usize,
    params: &TrajectoryParams,
    seed: u64,
) -> Result<Trajectory> {
    params.validate()?;
    let area = topology.area;
    let mut rng = substream(seed, "trajectory", &[id as u64]);
    for _ in 0..MAX_REDRAWS {
        let waypoints: Vec<Point> = (0..params.n_waypoints)
            .map(|_| {
                Point::new(
                    rng.random_range(0.0..=area.width),
                    rng.random_range(0.0..=area.height),
                )
            })
            .collect();
        match trajectory_from_waypoints(id, &waypoints, params.speed, params.sample_interval, &area) {
            Ok(t) if t.len() >= params.min_points => return Ok(t),
            Ok(_) | Err(Error::DegenerateTrajectory(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateTrajectory(format!(
        "trajectory {id}: no valid waypoint set after {MAX_REDRAWS} draws"
    )))
}

/// `n_traj` trajectories with ids `0..n_traj`, each on its own substream.
pub fn generate_trajectory_set(
    topology: &NetworkTopology,
    n_traj: usize,
    params: &TrajectoryParams,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if n_traj == 0 {
        return Err(Error::invalid("N_T must be at least 1"));
    }
    (0..n_traj)
        .map(|id| generate_trajectory(topology, id, params, seed))
        .collect()
}

/// Structured scenario file holding a topology and its trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub format_version: u32,
    pub topology: NetworkTopology,
    #[serde(default)]
    pub trajectories: Vec<Trajectory>,
}

impl ScenarioFile {
    pub fn new(topology: NetworkTopology, trajectories: Vec<Trajectory>) -> Self {
        ScenarioFile {
            format_version: SCENARIO_FORMAT_VERSION,
            topology,
            trajectories,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ScenarioFile = toml::from_str(&text)?;
        if file.format_version != SCENARIO_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: file.format_version,
                expected: SCENARIO_FORMAT_VERSION,
            });
        }
        file.topology.validate()?;
        Ok(file)
    }
}

/// Writes `traj_id,step,x_m,y_m` rows.
pub fn write_trajectories_csv<W: Write>(out: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["traj_id", "step", "x_m", "y_m"])?;
    for t in trajectories {
        for (k, p) in t.points.iter().enumerate() {
            w.write_record(&[
                t.id.to_string(),
                k.to_string(),
                format!("{:.16e}", p.x),
                format!("{:.16e}", p.y),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
