//! The cumulative occupancy field relative to a planning frame.
//!
//! Each submap's known cells are correlated with the Gaussian kernel of the
//! submap's uncertainty relative to the frame, converted to log-odds and
//! accumulated in submap order with clamping.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::submap::{LocalSubmap, SensorModelParams, SubmapStore};
use super::{cell_center, cell_of, logistic, logit, CellIndex, DenseGrid};
use crate::error::{Error, Result};
use crate::geometry::{compose_mean, compound, inverse, inverse_mean, PoseBelief, PoseGroup};
use crate::kernel::{cached_kernel, diagonal_variances, AlphaKernel};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    /// Kernel confidence used for fusion.
    pub alpha: f64,
    /// Probability treated as "no evidence of an obstacle" by the collision
    /// checker; values at or below it count as free.
    pub occupancy_floor: f64,
    /// Probability at or above which the collision checker treats a cell
    /// as fully occupied.
    pub occupancy_ceiling: f64,
    /// Occupancy assumed for never-observed space by the collision checker.
    pub unknown_value: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams { alpha: 0.9999, occupancy_floor: 0.5, occupancy_ceiling: 0.7, unknown_value: 0.0 }
    }
}

/// Box sums over the collision field.
#[derive(Debug)]
pub struct CollisionField {
    grid: DenseGrid<f64>,
    sat: Vec<f64>,
    sat_size: [usize; 3],
    unknown_value: f64,
}

impl CollisionField {
    fn new(map: &CumulativeMap) -> Self {
        let floor = map.occupancy_floor;
        let span = map.occupancy_ceiling - floor;
        let scale = if span > 0.0 { 1.0 / span } else { 0.0 };
        let data = map
            .grid
            .data
            .iter()
            .map(|&p| if p.is_nan() { map.unknown_value } else { ((p - floor) * scale).clamp(0.0, 1.0) })
            .collect();
        let grid = DenseGrid { lo: map.grid.lo, size: map.grid.size, data };
        let s = [grid.size[0] + 1, grid.size[1] + 1, grid.size[2] + 1];
        let mut sat = vec![0.0; s[0] * s[1] * s[2]];
        let at = |i: usize, j: usize, k: usize| (i * s[1] + j) * s[2] + k;
        for i in 1..s[0] {
            for j in 1..s[1] {
                for k in 1..s[2] {
                    let v = grid.data[((i - 1) * grid.size[1] + (j - 1)) * grid.size[2] + (k - 1)];
                    sat[at(i, j, k)] = v + sat[at(i - 1, j, k)] + sat[at(i, j - 1, k)] + sat[at(i, j, k - 1)]
                        - sat[at(i - 1, j - 1, k)]
                        - sat[at(i - 1, j, k - 1)]
                        - sat[at(i, j - 1, k - 1)]
                        + sat[at(i - 1, j - 1, k - 1)];
                }
            }
        }
        CollisionField { grid, sat, sat_size: s, unknown_value: map.unknown_value }
    }

    /// Collision occupancy of one cell; outside the grid it is the unknown value.
    #[inline]
    pub fn value(&self, c: &CellIndex) -> f64 {
        self.grid.get(c).copied().unwrap_or(self.unknown_value)
    }

    pub fn grid(&self) -> &DenseGrid<f64> {
        &self.grid
    }

    pub fn unknown_value(&self) -> f64 {
        self.unknown_value
    }

    /// Sum of collision occupancy over the inclusive box `lo..=hi`.
    pub fn box_sum(&self, lo: &CellIndex, hi: &CellIndex) -> f64 {
        let mut total = 1.0;
        let mut a = [0usize; 3];
        let mut b = [0usize; 3];
        let mut inside = 1.0;
        for d in 0..3 {
            let n = (hi[d] - lo[d] + 1).max(0) as f64;
            total *= n;
            let l = (lo[d] - self.grid.lo[d]).max(0);
            let h = (hi[d] - self.grid.lo[d] + 1).min(self.grid.size[d] as i64);
            if h <= l {
                inside = 0.0;
                a[d] = 0;
                b[d] = 0;
            } else {
                a[d] = l as usize;
                b[d] = h as usize;
                inside *= (h - l) as f64;
            }
        }
        let mut sum = 0.0;
        if inside > 0.0 {
            let s = self.sat_size;
            let at = |i: usize, j: usize, k: usize| self.sat[(i * s[1] + j) * s[2] + k];
            sum = at(b[0], b[1], b[2]) - at(a[0], b[1], b[2]) - at(b[0], a[1], b[2]) - at(b[0], b[1], a[2])
                + at(a[0], a[1], b[2])
                + at(a[0], b[1], a[2])
                + at(b[0], a[1], a[2])
                - at(a[0], a[1], a[2]);
        }
        (sum + (total - inside) * self.unknown_value).max(0.0)
    }
}

/// Dense fused occupancy relative to a planning frame.
#[derive(Debug)]
pub struct CumulativeMap {
    frame: PoseBelief,
    resolution: f64,
    dim: usize,
    grid: DenseGrid<f64>,
    generation: u64,
    occupancy_floor: f64,
    occupancy_ceiling: f64,
    unknown_value: f64,
    field: OnceLock<CollisionField>,
}

impl Clone for CumulativeMap {
    fn clone(&self) -> Self {
        CumulativeMap {
            frame: self.frame.clone(),
            resolution: self.resolution,
            dim: self.dim,
            grid: self.grid.clone(),
            generation: self.generation,
            occupancy_floor: self.occupancy_floor,
            occupancy_ceiling: self.occupancy_ceiling,
            unknown_value: self.unknown_value,
            field: OnceLock::new(),
        }
    }
}

impl CumulativeMap {
    /// Map from a dense probability grid; `NaN` marks unknown cells.
    pub fn from_grid(
        frame: PoseBelief,
        resolution: f64,
        grid: DenseGrid<f64>,
        occupancy_floor: f64,
        unknown_value: f64,
    ) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(Error::invalid("resolution must be positive"));
        }
        let dim = frame.group().workspace_dim();
        if dim == 2 && (grid.lo[2] != 0 || grid.size[2] > 1) {
            return Err(Error::invalid("planar map must have a single z layer at index 0"));
        }
        if grid.data.iter().any(|v| !v.is_nan() && !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("occupancy values must lie in [0, 1]"));
        }
        Ok(CumulativeMap {
            frame,
            resolution,
            dim,
            grid,
            generation: next_generation(),
            occupancy_floor,
            occupancy_ceiling: 1.0,
            unknown_value,
            field: OnceLock::new(),
        })
    }

    /// Map with no known cells.
    pub fn empty(frame: PoseBelief, resolution: f64, params: &FusionParams) -> Self {
        let grid = DenseGrid::new([0, 0, 0], [0, 0, 0], f64::NAN);
        Self::from_grid(frame, resolution, grid, params.occupancy_floor, params.unknown_value)
            .expect("empty map is valid")
    }

    pub fn frame(&self) -> &PoseBelief {
        &self.frame
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn grid(&self) -> &DenseGrid<f64> {
        &self.grid
    }

    /// Probability at or above which a cell counts as fully occupied.
    pub fn with_ceiling(mut self, ceiling: f64) -> Self {
        self.occupancy_ceiling = ceiling.clamp(self.occupancy_floor + 1e-9, 1.0);
        self.field = OnceLock::new();
        self
    }

    pub fn occupancy_ceiling(&self) -> f64 {
        self.occupancy_ceiling
    }

    pub fn occupancy_floor(&self) -> f64 {
        self.occupancy_floor
    }

    pub fn unknown_value(&self) -> f64 {
        self.unknown_value
    }

    /// Fused probability at a cell, `None` when unknown.
    pub fn value_at_cell(&self, c: &CellIndex) -> Option<f64> {
        self.grid.get(c).copied().filter(|v| !v.is_nan())
    }

    /// Fused probability at a point in frame coordinates, `None` when unknown.
    pub fn value_at(&self, p: &[f64]) -> Option<f64> {
        self.value_at_cell(&cell_of(p, self.resolution))
    }

    pub fn cell_of(&self, p: &[f64]) -> CellIndex {
        cell_of(p, self.resolution)
    }

    pub fn known_count(&self) -> usize {
        self.grid.data.iter().filter(|v| !v.is_nan()).count()
    }

    /// Extent of the grid in frame coordinates as `(min, max)` corners.
    pub fn extent(&self) -> (Vec<f64>, Vec<f64>) {
        let h = self.resolution;
        let lo = (0..self.dim).map(|d| self.grid.lo[d] as f64 * h).collect();
        let hi = (0..self.dim).map(|d| (self.grid.lo[d] + self.grid.size[d] as i64) as f64 * h).collect();
        (lo, hi)
    }

    /// Collision occupancy field, built on first use.
    pub fn collision_field(&self) -> &CollisionField {
        self.field.get_or_init(|| CollisionField::new(self))
    }
}

/// Positional standard deviations of a relative pose, with orientation
/// uncertainty folded in over the lever arm `r_max`.
fn relative_sigmas(rel: &PoseBelief, r_max: f64) -> Vec<f64> {
    let var = diagonal_variances(&rel.position_cov());
    let mut s: Vec<f64> = var.iter().map(|v| v.max(0.0).sqrt()).collect();
    let cov = rel.cov();
    match rel.group() {
        PoseGroup::Se2 => {
            let sp = cov[(2, 2)].max(0.0).sqrt() * r_max;
            s[0] += sp;
            s[1] += sp;
        }
        PoseGroup::Se3 => {
            let sp = cov[(3, 3)].max(0.0).sqrt() * r_max;
            let st = cov[(4, 4)].max(0.0).sqrt() * r_max;
            s[0] += sp;
            s[1] += sp;
            s[2] += st;
        }
    }
    s
}

/// Blurred probability fields of one submap over its dilated support,
/// one per evidence channel.
struct BlurredSubmap {
    direct: DenseGrid<f64>,
    occluded: DenseGrid<f64>,
    support: DenseGrid<bool>,
}

impl BlurredSubmap {
    /// Direct and occluded log-odds contributed at a support offset.
    fn log_odds(&self, i: usize, sp: &SensorModelParams) -> (f64, f64) {
        (sp.clamp(logit(self.direct.data[i])), logit(self.occluded.data[i]).clamp(0.0, sp.l_occ))
    }
}

/// Add one submap's contribution to the running channel sums.
fn accumulate(acc: (f64, f64), add: (f64, f64), sp: &SensorModelParams) -> (f64, f64) {
    (sp.clamp(acc.0 + add.0), (acc.1 + add.1).min(sp.l_occ))
}

fn blur_submap(sub: &LocalSubmap, kernel: &AlphaKernel) -> Option<BlurredSubmap> {
    let (lo, hi) = sub.bounds()?;
    let dim = sub.dim();
    let k = kernel.half_widths();
    let mut plo = lo;
    let mut phi = hi;
    for d in 0..dim {
        plo[d] -= k[d] as i64;
        phi[d] += k[d] as i64;
    }
    let mut direct = DenseGrid::spanning(plo, phi, 0.0);
    let mut occluded = DenseGrid::spanning(plo, phi, 0.0);
    let mut support = DenseGrid::spanning(plo, phi, false);
    for (c, e) in sub.cell_evidence() {
        let i = direct.offset(c).expect("cell inside padded bounds");
        direct.data[i] = logistic(e.direct);
        occluded.data[i] = logistic(e.occluded);
        support.data[i] = true;
    }
    for d in 0..dim {
        direct.correlate_axis(d, kernel.factor(d));
        occluded.correlate_axis(d, kernel.factor(d));
        support.dilate_axis(d, k[d]);
    }
    Some(BlurredSubmap { direct, occluded, support })
}

/// Fuse every submap of `store` into a dense map relative to `frame`.
pub fn build_cumulative(frame: &PoseBelief, store: &SubmapStore, params: &FusionParams) -> Result<CumulativeMap> {
    let group = store.group();
    if frame.group() != group {
        return Err(Error::FrameMismatch("planning frame and submaps use different pose groups".into()));
    }
    let dim = group.workspace_dim();
    let h = store.resolution();
    let sp = store.params();
    let inv_frame = inverse(frame);

    struct Job {
        rel_mean: Vec<f64>,
        blurred: BlurredSubmap,
        lo: CellIndex,
        hi: CellIndex,
    }
    let mut jobs = Vec::new();
    for sub in store.submaps() {
        if sub.is_empty() {
            continue;
        }
        // pose of the submap in the planning frame
        let rel = compound(&inv_frame, &sub.origin, None)?;
        let sigmas = relative_sigmas(&rel, sub.max_extent());
        let kernel = cached_kernel(&sigmas, h, params.alpha)?;
        let Some(blurred) = blur_submap(sub, &kernel) else { continue };
        // bounding box of the support corners mapped into the frame
        let (slo, shi) = (blurred.support.lo, blurred.support.hi());
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        if dim == 2 {
            lo[2] = 0;
            hi[2] = 0;
        }
        for corner in 0..(1 << dim) {
            let mut p = vec![0.0; group.dim()];
            for d in 0..dim {
                let idx = if corner & (1 << d) != 0 { shi[d] + 1 } else { slo[d] };
                p[d] = idx as f64 * h;
            }
            let q = compose_mean(group, rel.mean().as_slice(), &p);
            for d in 0..dim {
                let c = (q[d] / h).floor() as i64;
                lo[d] = lo[d].min(c - 1);
                hi[d] = hi[d].max(c + 1);
            }
        }
        jobs.push(Job { rel_mean: rel.mean().as_slice().to_vec(), blurred, lo, hi });
    }

    if jobs.is_empty() {
        return Ok(CumulativeMap::empty(frame.clone(), h, params));
    }
    let mut glo = [i64::MAX; 3];
    let mut ghi = [i64::MIN; 3];
    for j in &jobs {
        for d in 0..3 {
            glo[d] = glo[d].min(j.lo[d]);
            ghi[d] = ghi[d].max(j.hi[d]);
        }
    }
    // running (direct, occluded) sums; NaN marks cells no submap reaches
    let mut acc: DenseGrid<(f64, f64)> = DenseGrid::spanning(glo, ghi, (f64::NAN, 0.0));
    for job in &jobs {
        let inv_rel = inverse_mean(group, &job.rel_mean);
        let mut p = vec![0.0; group.dim()];
        for i in job.lo[0]..=job.hi[0] {
            for j in job.lo[1]..=job.hi[1] {
                for k in job.lo[2]..=job.hi[2] {
                    let c = [i, j, k];
                    let center = cell_center(&c, h, dim);
                    p[..dim].copy_from_slice(&center);
                    let q = compose_mean(group, inv_rel.as_slice(), &p);
                    let sc = cell_of(&q.as_slice()[..dim], h);
                    let Some(si) = job.blurred.support.offset(&sc) else { continue };
                    if !job.blurred.support.data[si] {
                        continue;
                    }
                    let add = job.blurred.log_odds(si, sp);
                    let slot = acc.get_mut(&c).expect("cell inside fused bounds");
                    let prev = if slot.0.is_nan() { (0.0, 0.0) } else { *slot };
                    *slot = accumulate(prev, add, sp);
                }
            }
        }
    }
    let fused = DenseGrid {
        lo: acc.lo,
        size: acc.size,
        data: acc.data.iter().map(|(d, o)| if d.is_nan() { f64::NAN } else { logistic(sp.clamp(d + o)) }).collect(),
    };
    CumulativeMap::from_grid(frame.clone(), h, fused, params.occupancy_floor, params.unknown_value)
        .map(|m| m.with_ceiling(params.occupancy_ceiling))
}

/// Result of a single-point occupancy query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResult {
    pub probability: f64,
    pub known: bool,
}

impl QueryResult {
    pub const UNKNOWN: QueryResult = QueryResult { probability: 0.5, known: false };
}

/// Occupancy probability of a point given in frame `frame_y`.
///
/// The kernel is centred on the submap cell containing the transformed
/// point, so the result matches the cumulative map built for the same frame
/// when the grids align.
pub fn query_point(p: &[f64], frame_y: &PoseBelief, store: &SubmapStore, params: &FusionParams) -> Result<QueryResult> {
    let group = store.group();
    let dim = group.workspace_dim();
    if frame_y.group() != group {
        return Err(Error::FrameMismatch("query frame and submaps use different pose groups".into()));
    }
    if p.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
    }
    let h = store.resolution();
    let sp = store.params();
    let mut pose = vec![0.0; group.dim()];
    pose[..dim].copy_from_slice(p);
    let mut l_acc: Option<(f64, f64)> = None;
    for sub in store.submaps() {
        if sub.is_empty() {
            continue;
        }
        // pose of the frame in the submap, then the point through it
        let rel = compound(&inverse(&sub.origin), frame_y, None)?;
        let sigmas = relative_sigmas(&inverse(&rel), sub.max_extent());
        let local = compose_mean(group, rel.mean().as_slice(), &pose);
        let kernel = cached_kernel(&sigmas, h, params.alpha)?;
        let c0 = cell_of(&local.as_slice()[..dim], h);
        let k = kernel.half_widths();
        let (mut pd, mut po) = (0.0, 0.0);
        let mut any = false;
        for (c, e) in sub.cell_evidence() {
            let mut idx = [0usize; 3];
            let mut inside = true;
            for d in 0..dim {
                let off = c[d] - c0[d] + k[d] as i64;
                if off < 0 || off > 2 * k[d] as i64 {
                    inside = false;
                    break;
                }
                idx[d] = off as usize;
            }
            if inside {
                any = true;
                let w = kernel.get(&idx[..dim]);
                pd += logistic(e.direct) * w;
                po += logistic(e.occluded) * w;
            }
        }
        if any {
            let add = (sp.clamp(logit(pd)), logit(po).clamp(0.0, sp.l_occ));
            l_acc = Some(accumulate(l_acc.unwrap_or((0.0, 0.0)), add, sp));
        }
    }
    Ok(match l_acc {
        Some((d, o)) => QueryResult { probability: logistic(sp.clamp(d + o)), known: true },
        None => QueryResult::UNKNOWN,
    })
}

/// Largest fused probability in the map.
pub fn max_probability(map: &CumulativeMap) -> f64 {
    map.grid.data.iter().filter(|v| !v.is_nan()).cloned().fold(0.0, f64::max)
}

/// Positional covariance of a frame, convenience for tests and callers
/// building translation-only frames.
pub fn positional_frame(position: &[f64], var: f64) -> Result<PoseBelief> {
    let n = position.len();
    PoseBelief::translation(position, &(DMatrix::identity(n, n) * var))
}
