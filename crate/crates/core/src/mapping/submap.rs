//! Local occupancy submaps built from range scans.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{cell_center, cell_of, logistic, CellIndex};
use crate::error::{Error, Result};
use crate::geometry::{compose_mean, inverse_mean, PoseBelief, PoseGroup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModelParams {
    pub l_free: f64,
    pub l_occ: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub gamma: f64,
    pub max_range: f64,
}

impl Default for SensorModelParams {
    fn default() -> Self {
        SensorModelParams { l_free: -0.4, l_occ: 0.85, l_min: -2.0, l_max: 3.5, gamma: 0.8, max_range: 10.0 }
    }
}

impl SensorModelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.l_free < 0.0
            && self.l_occ > 0.0
            && self.l_min < 0.0
            && self.l_max > 0.0
            && self.gamma > 0.0
            && self.gamma < 1.0
            && self.max_range > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("sensor model parameters out of range".into()))
        }
    }

    pub fn clamp(&self, l: f64) -> f64 {
        l.clamp(self.l_min, self.l_max)
    }
}

/// Log-odds increment of a cell `d` metres behind a beam endpoint.
pub fn occluded_increment(d: f64, params: &SensorModelParams) -> f64 {
    params.gamma.powf(d.max(0.0)) * params.l_occ
}

/// One range measurement. `dir` is a unit vector in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    pub dir: Vec<f64>,
    pub range: f64,
    pub hit: bool,
}

/// A set of beams taken from one exact sensor pose.
///
/// `pose` is the sensor pose in the frame of the submap receiving the scan,
/// `(x, y, psi)` or `(x, y, z, psi, theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub pose: Vec<f64>,
    pub beams: Vec<Beam>,
}

/// Visit the cells crossed by the segment `origin + t dir`, `t in [0, t_max)`,
/// as `(cell, t_enter, t_exit)`.
pub fn traverse(origin: &[f64], dir: &[f64], t_max: f64, h: f64, mut visit: impl FnMut(CellIndex, f64, f64)) {
    let dim = origin.len();
    let mut cell = cell_of(origin, h);
    let mut step = [0i64; 3];
    let mut t_next = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..dim {
        if dir[a] > 0.0 {
            step[a] = 1;
            t_next[a] = ((cell[a] + 1) as f64 * h - origin[a]) / dir[a];
            t_delta[a] = h / dir[a];
        } else if dir[a] < 0.0 {
            step[a] = -1;
            t_next[a] = (cell[a] as f64 * h - origin[a]) / dir[a];
            t_delta[a] = -h / dir[a];
        }
    }
    let mut t = 0.0;
    while t < t_max {
        let mut a = 0;
        for b in 1..dim {
            if t_next[b] < t_next[a] {
                a = b;
            }
        }
        let exit = t_next[a];
        visit(cell, t, exit);
        cell[a] += step[a];
        t = exit;
        t_next[a] += t_delta[a];
    }
}

#[derive(Debug, Clone, Copy)]
enum Update {
    Free,
    Occluded(f64),
    Hit,
}

impl Update {
    /// Direct observations outrank the inferred occluded tail.
    fn rank(self) -> u8 {
        match self {
            Update::Occluded(_) => 0,
            Update::Free => 1,
            Update::Hit => 2,
        }
    }

    fn merge(self, other: Update) -> Update {
        match (self, other) {
            (Update::Occluded(a), Update::Occluded(b)) => Update::Occluded(a.max(b)),
            _ if other.rank() > self.rank() => other,
            _ => self,
        }
    }
}

/// Evidence held for one cell.
///
/// Direct observations (hits and free traversals) and inferred occupancy
/// behind hits are kept apart: the occluded sum saturates at `l_occ`, so
/// inference alone never outweighs a single hit. Saturating addition of
/// non-negative terms is associative, which keeps the result independent
/// of how scans are grouped into submaps.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellEvidence {
    pub direct: f64,
    pub occluded: f64,
    /// `clamp(direct + occluded)`.
    pub value: f64,
}

/// An occupancy grid anchored at an uncertain pose in the world.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSubmap {
    pub id: usize,
    pub origin: PoseBelief,
    pub resolution: f64,
    pub created_at: f64,
    cells: HashMap<CellIndex, CellEvidence>,
    bounds: Option<(CellIndex, CellIndex)>,
    last_scan_at: Option<f64>,
}

impl LocalSubmap {
    pub fn new(id: usize, origin: PoseBelief, resolution: f64, created_at: f64) -> Self {
        LocalSubmap { id, origin, resolution, created_at, cells: HashMap::new(), bounds: None, last_scan_at: None }
    }

    pub fn dim(&self) -> usize {
        self.origin.group().workspace_dim()
    }

    pub fn log_odds(&self, c: &CellIndex) -> Option<f64> {
        self.cells.get(c).map(|e| e.value)
    }

    /// Both evidence channels of a cell.
    pub fn evidence(&self, c: &CellIndex) -> Option<CellEvidence> {
        self.cells.get(c).copied()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Inclusive cell-index bounds of the known cells.
    pub fn bounds(&self) -> Option<(CellIndex, CellIndex)> {
        self.bounds
    }

    /// Known cells as `(index, log-odds)` in unspecified order.
    pub fn cells(&self) -> impl Iterator<Item = (&CellIndex, &f64)> {
        self.cells.iter().map(|(c, e)| (c, &e.value))
    }

    /// Known cells with both evidence channels, in unspecified order.
    pub fn cell_evidence(&self) -> impl Iterator<Item = (&CellIndex, &CellEvidence)> {
        self.cells.iter()
    }

    /// Known cells as `(index, log-odds)` sorted by index.
    pub fn sorted_cells(&self) -> Vec<(CellIndex, f64)> {
        let mut v: Vec<(CellIndex, f64)> = self.cells.iter().map(|(k, e)| (*k, e.value)).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    /// Known cells as `(centre in submap frame, occupancy probability)`.
    pub fn known_cells(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        let dim = self.dim();
        let h = self.resolution;
        self.sorted_cells().into_iter().map(move |(c, l)| (cell_center(&c, h, dim), logistic(l)))
    }

    /// Time span covered by the integrated scans.
    pub fn span(&self) -> f64 {
        self.last_scan_at.map(|t| t - self.created_at).unwrap_or(0.0)
    }

    fn apply(&mut self, c: CellIndex, u: Update, params: &SensorModelParams) {
        let e = self.cells.entry(c).or_default();
        match u {
            Update::Free => e.direct = params.clamp(e.direct + params.l_free),
            Update::Hit => e.direct = params.clamp(e.direct + params.l_occ),
            Update::Occluded(v) => e.occluded = (e.occluded + v).min(params.l_occ),
        }
        e.value = params.clamp(e.direct + e.occluded);
        self.bounds = Some(match self.bounds {
            None => (c, c),
            Some((lo, hi)) => (
                [lo[0].min(c[0]), lo[1].min(c[1]), lo[2].min(c[2])],
                [hi[0].max(c[0]), hi[1].max(c[1]), hi[2].max(c[2])],
            ),
        });
    }

    /// Fuse one scan expressed in this submap's frame.
    pub fn integrate(&mut self, scan: &Scan, params: &SensorModelParams, now: f64) -> Result<()> {
        let dim = self.dim();
        let group = self.origin.group();
        if scan.pose.len() != group.dim() {
            return Err(Error::DimensionMismatch { expected: group.dim(), found: scan.pose.len() });
        }
        let h = self.resolution;
        let origin = &scan.pose[..dim];
        let yaw = scan.pose[if dim == 2 { 2 } else { 3 }];
        let (s, c) = yaw.sin_cos();
        let mut updates: HashMap<CellIndex, Update> = HashMap::new();
        for beam in &scan.beams {
            if beam.dir.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: beam.dir.len() });
            }
            if !(beam.range > 0.0) || beam.range > params.max_range * (1.0 + 1e-12) {
                return Err(Error::invalid(format!("beam range {} outside (0, {}]", beam.range, params.max_range)));
            }
            let norm = beam.dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(Error::invalid("beam direction must be non-zero"));
            }
            let mut dir: Vec<f64> = beam.dir.iter().map(|v| v / norm).collect();
            let (dx, dy) = (dir[0], dir[1]);
            dir[0] = c * dx - s * dy;
            dir[1] = s * dx + c * dy;
            let end: Vec<f64> = (0..dim).map(|a| origin[a] + dir[a] * beam.range).collect();
            let end_cell = cell_of(&end, h);
            let t_stop = if beam.hit { params.max_range } else { beam.range };
            let mut reached = false;
            traverse(origin, &dir, t_stop, h, |cell, t_in, t_out| {
                let u = if reached {
                    Update::Occluded(occluded_increment(t_in - beam.range, params))
                } else if cell == end_cell || t_out > beam.range + 1e-9 {
                    reached = true;
                    if beam.hit {
                        Update::Hit
                    } else {
                        Update::Free
                    }
                } else {
                    Update::Free
                };
                updates.entry(cell).and_modify(|e| *e = e.merge(u)).or_insert(u);
            });
        }
        let mut sorted: Vec<(CellIndex, Update)> = updates.into_iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        for (cell, u) in sorted {
            self.apply(cell, u, params);
        }
        self.last_scan_at = Some(now);
        Ok(())
    }

    /// Distance from the submap origin to its farthest known cell centre.
    pub fn max_extent(&self) -> f64 {
        let dim = self.dim();
        let h = self.resolution;
        self.cells
            .keys()
            .map(|c| cell_center(c, h, dim).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// The ordered set of submaps; the last one is active, the others frozen.
#[derive(Debug, Clone)]
pub struct SubmapStore {
    params: SensorModelParams,
    resolution: f64,
    group: PoseGroup,
    period: f64,
    submaps: Vec<Arc<LocalSubmap>>,
    robot_pose: Option<PoseBelief>,
}

impl SubmapStore {
    pub fn new(params: SensorModelParams, resolution: f64, group: PoseGroup, period: f64) -> Result<Self> {
        params.validate()?;
        if !(resolution > 0.0) || !(period > 0.0) {
            return Err(Error::Config("map resolution and submap period must be positive".into()));
        }
        Ok(SubmapStore { params, resolution, group, period, submaps: Vec::new(), robot_pose: None })
    }

    pub fn params(&self) -> &SensorModelParams {
        &self.params
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn group(&self) -> PoseGroup {
        self.group
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn len(&self) -> usize {
        self.submaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.submaps.is_empty()
    }

    pub fn submaps(&self) -> &[Arc<LocalSubmap>] {
        &self.submaps
    }

    pub fn get(&self, id: usize) -> Result<&LocalSubmap> {
        self.submaps.get(id).map(|s| s.as_ref()).ok_or(Error::UnknownSubmap(id))
    }

    pub fn active(&self) -> Option<&LocalSubmap> {
        self.submaps.last().map(|s| s.as_ref())
    }

    /// Record the latest robot pose estimate; used as origin on rollover.
    pub fn set_robot_pose(&mut self, pose: PoseBelief) {
        self.robot_pose = Some(pose);
    }

    /// Open a new active submap anchored at `robot_pose`.
    pub fn start_submap(&mut self, robot_pose: PoseBelief, now: f64) -> Result<usize> {
        if robot_pose.group() != self.group {
            return Err(Error::DimensionMismatch { expected: self.group.dim(), found: robot_pose.group().dim() });
        }
        let id = self.submaps.len();
        self.robot_pose = Some(robot_pose.clone());
        self.submaps.push(Arc::new(LocalSubmap::new(id, robot_pose, self.resolution, now)));
        Ok(id)
    }

    /// Whether the active submap has reached its time limit at `now`.
    pub fn rollover_due(&self, now: f64) -> bool {
        match self.active() {
            None => true,
            Some(s) => now - s.created_at >= self.period - 1e-9,
        }
    }

    /// Fuse a scan expressed in the active submap frame, rolling over first
    /// if the active submap is too old.
    pub fn integrate_scan(&mut self, scan: &Scan, now: f64) -> Result<usize> {
        let mut scan = scan.clone();
        if self.rollover_due(now) {
            let pose = self
                .robot_pose
                .clone()
                .ok_or_else(|| Error::invalid("no robot pose available to anchor a new submap"))?;
            if let Some(old) = self.active() {
                // re-express the sensor pose in the new frame
                let world = compose_mean(self.group, old.origin.mean().as_slice(), &scan.pose);
                let inv = inverse_mean(self.group, pose.mean().as_slice());
                scan.pose = compose_mean(self.group, inv.as_slice(), world.as_slice()).as_slice().to_vec();
            }
            self.start_submap(pose, now)?;
        }
        let params = self.params.clone();
        let active = self.submaps.last_mut().expect("active submap");
        Arc::make_mut(active).integrate(&scan, &params, now)?;
        Ok(active.id)
    }

    /// Sensor pose expressed in the active submap frame (means only).
    pub fn to_active_frame(&self, world_pose: &[f64]) -> Vec<f64> {
        match self.active() {
            None => world_pose.to_vec(),
            Some(s) => {
                let inv = inverse_mean(self.group, s.origin.mean().as_slice());
                compose_mean(self.group, inv.as_slice(), world_pose).as_slice().to_vec()
            }
        }
    }

    /// Known cells of one submap.
    pub fn known_cells(&self, id: usize) -> Result<Vec<(Vec<f64>, f64)>> {
        Ok(self.get(id)?.known_cells().collect())
    }
}
