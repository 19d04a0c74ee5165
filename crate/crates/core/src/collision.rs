//! Probabilistic state validation against the fused occupancy field, the
//! linear chance-constraint baselines, and a sampling oracle.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::kernel::{axis_factor, critical_value, diagonal_variances, half_width};
use crate::mapping::{CellIndex, CumulativeMap};
use crate::motion::Belief;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyConfig {
    pub p_safe: f64,
    pub alpha: f64,
    pub p_goal: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig { p_safe: 0.95, alpha: 0.99, p_goal: 0.9 }
    }
}

impl SafetyConfig {
    pub fn new(p_safe: f64, alpha: f64, p_goal: f64) -> Result<Self> {
        let c = SafetyConfig { p_safe, alpha, p_goal };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_safe", self.p_safe), ("alpha", self.alpha), ("p_goal", self.p_goal)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.alpha >= 1.0 {
            return Err(Error::Config("alpha must be below 1".into()));
        }
        if self.alpha <= self.p_safe {
            return Err(Error::Config(format!(
                "alpha ({}) must exceed p_safe ({})",
                self.alpha, self.p_safe
            )));
        }
        Ok(())
    }

    /// Largest collision mass a safe belief may carry, `alpha - p_safe`.
    pub fn budget(&self) -> f64 {
        self.alpha - self.p_safe
    }
}

/// Kernel placed on the map grid around a positional mean.
struct PlacedKernel {
    c0: CellIndex,
    factors: [Vec<f64>; 3],
}

impl PlacedKernel {
    fn new(pos: &[f64], sigmas: &[f64], h: f64, alpha: f64) -> Result<Self> {
        let dim = pos.len();
        if sigmas.len() != dim || !(2..=3).contains(&dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: sigmas.len() });
        }
        let t = critical_value(alpha, dim)?;
        let mut c0 = [0i64; 3];
        let mut factors = [vec![1.0], vec![1.0], vec![1.0]];
        for d in 0..dim {
            c0[d] = (pos[d] / h).floor() as i64;
            let offset = pos[d] - (c0[d] as f64 + 0.5) * h;
            factors[d] = axis_factor(sigmas[d], h, half_width(sigmas[d], h, t), offset);
        }
        Ok(PlacedKernel { c0, factors })
    }

    fn half(&self, d: usize) -> i64 {
        (self.factors[d].len() / 2) as i64
    }

    fn lo(&self) -> CellIndex {
        [self.c0[0] - self.half(0), self.c0[1] - self.half(1), self.c0[2] - self.half(2)]
    }

    fn hi(&self) -> CellIndex {
        [self.c0[0] + self.half(0), self.c0[1] + self.half(1), self.c0[2] + self.half(2)]
    }

    fn max_cell(&self) -> f64 {
        self.factors.iter().map(|f| f.iter().cloned().fold(0.0, f64::max)).product()
    }

    /// Inner product with the map; stops early once it exceeds `stop`.
    fn inner(&self, map: &CumulativeMap, stop: f64) -> f64 {
        let field = map.collision_field();
        let lo = self.lo();
        let mut sum = 0.0;
        for (a, &fa) in self.factors[0].iter().enumerate() {
            let i = lo[0] + a as i64;
            for (b, &fb) in self.factors[1].iter().enumerate() {
                let j = lo[1] + b as i64;
                let wab = fa * fb;
                for (c, &fc) in self.factors[2].iter().enumerate() {
                    let k = lo[2] + c as i64;
                    sum += wab * fc * field.value(&[i, j, k]);
                }
            }
            if sum > stop {
                return sum;
            }
        }
        sum
    }
}

/// Collision mass of a Gaussian position inside its alpha-kernel.
///
/// `sigmas` are per-axis standard deviations in metres.
pub fn p_collision_alpha(pos: &[f64], sigmas: &[f64], map: &CumulativeMap, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    if pos.len() != map.dim() {
        return Err(Error::DimensionMismatch { expected: map.dim(), found: pos.len() });
    }
    let k = PlacedKernel::new(pos, sigmas, map.resolution(), alpha)?;
    let field = map.collision_field();
    if field.box_sum(&k.lo(), &k.hi()) <= 0.0 {
        return Ok(0.0);
    }
    Ok(k.inner(map, f64::INFINITY).min(alpha))
}

/// `alpha - p_collision_alpha >= p_safe`, with cheap bounds tried first.
pub fn is_safe_at(pos: &[f64], sigmas: &[f64], map: &CumulativeMap, cfg: &SafetyConfig) -> Result<bool> {
    if pos.len() != map.dim() {
        return Err(Error::DimensionMismatch { expected: map.dim(), found: pos.len() });
    }
    let budget = cfg.budget();
    let k = PlacedKernel::new(pos, sigmas, map.resolution(), cfg.alpha)?;
    let s = map.collision_field().box_sum(&k.lo(), &k.hi());
    if s <= 0.0 || k.max_cell() * s <= budget {
        return Ok(true);
    }
    Ok(k.inner(map, budget) <= budget)
}

/// Per-axis standard deviations of a belief's position, inflated by the
/// robot's bounding radius.
pub fn belief_sigmas(b: &Belief, r_body: f64) -> Vec<f64> {
    diagonal_variances(&b.position_cov()).iter().map(|v| v.max(0.0).sqrt() + r_body).collect()
}

/// The state validity checker used by the planner and the manager.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checker {
    pub safety: SafetyConfig,
    pub r_body: f64,
}

impl Checker {
    pub fn new(safety: SafetyConfig, r_body: f64) -> Result<Self> {
        safety.validate()?;
        if !(r_body >= 0.0) {
            return Err(Error::Config("robot radius must be non-negative".into()));
        }
        Ok(Checker { safety, r_body })
    }

    pub fn p_collision(&self, b: &Belief, map: &CumulativeMap) -> Result<f64> {
        p_collision_alpha(b.position(), &belief_sigmas(b, self.r_body), map, self.safety.alpha)
    }

    pub fn is_safe(&self, b: &Belief, map: &CumulativeMap) -> bool {
        is_safe_at(b.position(), &belief_sigmas(b, self.r_body), map, &self.safety).unwrap_or(false)
    }
}

/// Convex polytope `{x : n_j . x <= b_j for all j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub faces: Vec<(Vec<f64>, f64)>,
}

impl Polytope {
    /// Axis-aligned box with corners `lo` and `hi`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Self {
        let dim = lo.len();
        let mut faces = Vec::with_capacity(2 * dim);
        for d in 0..dim {
            let mut n = vec![0.0; dim];
            n[d] = 1.0;
            faces.push((n.clone(), hi[d]));
            n[d] = -1.0;
            faces.push((n, -lo[d]));
        }
        Polytope { faces }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearObstacleSet {
    pub obstacles: Vec<Polytope>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcVariant {
    /// Total bound over all obstacles compared with `1 - p_safe`.
    OpenLoopSum,
    /// Each obstacle bounded by `(1 - p_safe) / n_o`.
    PerObstacle,
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper bound on the probability of lying inside one obstacle: the smallest
/// single-face half-space mass.
pub fn obstacle_bound(mean: &[f64], sigmas: &[f64], obs: &Polytope) -> f64 {
    obs.faces
        .iter()
        .map(|(n, b)| {
            let mu: f64 = n.iter().zip(mean).map(|(a, m)| a * m).sum();
            let s = n.iter().zip(sigmas).map(|(a, s)| (a * s).powi(2)).sum::<f64>().sqrt();
            if s <= 0.0 {
                if mu <= *b {
                    1.0
                } else {
                    0.0
                }
            } else {
                std_normal_cdf((b - mu) / s)
            }
        })
        .fold(1.0, f64::min)
}

/// Linear chance-constraint check of a Gaussian position.
pub fn cc_check(mean: &[f64], sigmas: &[f64], obs: &LinearObstacleSet, p_safe: f64, variant: CcVariant) -> bool {
    let n = obs.obstacles.len();
    if n == 0 {
        return true;
    }
    let risk = 1.0 - p_safe;
    match variant {
        CcVariant::OpenLoopSum => {
            let mut total = 0.0;
            for o in &obs.obstacles {
                total += obstacle_bound(mean, sigmas, o);
                if total > risk {
                    return false;
                }
            }
            true
        }
        CcVariant::PerObstacle => {
            let each = risk / n as f64;
            obs.obstacles.iter().all(|o| obstacle_bound(mean, sigmas, o) <= each)
        }
    }
}

/// Continuous occupancy used as ground truth.
pub trait OccupancyField {
    /// Occupancy in `[0, 1]` at a point.
    fn occupancy(&self, p: &[f64]) -> f64;

    /// Whether any occupied space may lie within `radius` of `p`.
    fn near(&self, _p: &[f64], _radius: f64) -> bool {
        true
    }
}

/// Monte-Carlo estimate of the collision probability and its standard error.
pub fn oracle_p_collision<F: OccupancyField + ?Sized, R: Rng + ?Sized>(
    mean: &[f64],
    sigmas: &[f64],
    scene: &F,
    n_samples: usize,
    rng: &mut R,
) -> (f64, f64) {
    let n = n_samples.max(1);
    let smax = sigmas.iter().cloned().fold(0.0, f64::max);
    if !scene.near(mean, 7.0 * smax + 1e-9) {
        return (0.0, 0.0);
    }
    let dim = mean.len();
    let mut p = vec![0.0; dim];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        for d in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            p[d] = mean[d] + sigmas[d] * z;
        }
        let v = scene.occupancy(&p);
        sum += v;
        sum_sq += v * v;
    }
    let m = sum / n as f64;
    let var = (sum_sq / n as f64 - m * m).max(0.0);
    (m, (var / n as f64).sqrt())
}

/// Fraction of truly valid states the method also accepts, `TP / (TP + FN)`.
pub fn accuracy(outcomes: &[(bool, bool)]) -> f64 {
    let tp = outcomes.iter().filter(|(m, t)| *m && *t).count();
    let fneg = outcomes.iter().filter(|(m, t)| !*m && *t).count();
    if tp + fneg == 0 {
        1.0
    } else {
        tp as f64 / (tp + fneg) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PoseBelief, PoseGroup};
    use crate::mapping::DenseGrid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn map2d(fill: f64) -> CumulativeMap {
        let g = DenseGrid::new([-40, -40, 0], [80, 80, 1], fill);
        CumulativeMap::from_grid(PoseBelief::identity(PoseGroup::Se2), 0.5, g, 0.0, 0.0).unwrap()
    }

    struct HalfSpace;
    impl OccupancyField for HalfSpace {
        fn occupancy(&self, p: &[f64]) -> f64 {
            (p[0] > 0.0) as u8 as f64
        }
    }

    struct Const(f64);
    impl OccupancyField for Const {
        fn occupancy(&self, _: &[f64]) -> f64 {
            self.0
        }
    }

    #[test]
    fn config_requires_alpha_above_p_safe() {
        assert!(SafetyConfig::new(0.95, 0.9, 0.9).is_err());
        assert!(SafetyConfig::new(0.95, 0.99, 0.9).is_ok());
    }

    #[test]
    fn free_and_full_maps() {
        let free = map2d(0.0);
        assert_eq!(p_collision_alpha(&[0.1, 0.2], &[1.0, 1.0], &free, 0.99).unwrap(), 0.0);
        let full = map2d(1.0);
        let p = p_collision_alpha(&[0.1, 0.2], &[1.0, 1.0], &full, 0.99).unwrap();
        assert!(p >= 0.99 - 0.05 && p <= 0.99, "{p}");
        assert!(p_collision_alpha(&[0.0, 0.0], &[1.0, 1.0], &full, 0.0).is_err());
    }

    #[test]
    fn is_safe_threshold_examples() {
        let cfg = SafetyConfig::new(0.95, 0.99, 0.9).unwrap();
        assert!(cfg.budget() >= 0.0);
        assert!(!(0.99 - 0.05 >= 0.95));
        let free = map2d(0.0);
        assert!(is_safe_at(&[0.0, 0.0], &[0.5, 0.5], &free, &cfg).unwrap());
        // uniform 0.05 occupancy gives p ~ 0.05 * mass
        let light = map2d(0.05);
        let p = p_collision_alpha(&[0.0, 0.0], &[0.5, 0.5], &light, 0.99).unwrap();
        assert_eq!(is_safe_at(&[0.0, 0.0], &[0.5, 0.5], &light, &cfg).unwrap(), 0.99 - p >= 0.95);
    }

    #[test]
    fn fast_path_agrees_with_full_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = DenseGrid::new([-40, -40, 0], [80, 80, 1], 0.0);
        for v in g.data.iter_mut() {
            if rng.random::<f64>() < 0.03 {
                *v = rng.random::<f64>();
            }
        }
        let map = CumulativeMap::from_grid(PoseBelief::identity(PoseGroup::Se2), 0.5, g, 0.0, 0.0).unwrap();
        let cfg = SafetyConfig::new(0.9, 0.99, 0.9).unwrap();
        for _ in 0..2000 {
            let pos = [rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0)];
            let s = rng.random_range(0.0..1.5);
            let p = p_collision_alpha(&pos, &[s, s], &map, 0.99).unwrap();
            assert_eq!(is_safe_at(&pos, &[s, s], &map, &cfg).unwrap(), 0.99 - p >= 0.9);
        }
    }

    #[test]
    fn cc_examples() {
        let cube = Polytope::from_box(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]);
        let set = LinearObstacleSet { obstacles: vec![cube.clone()] };
        assert!(cc_check(&[5.0; 3], &[1.0; 3], &LinearObstacleSet::default(), 0.999, CcVariant::OpenLoopSum));
        let face = [1.0, 0.5, 0.5];
        let b = obstacle_bound(&face, &[1e-6; 3], &cube);
        assert!((b - 0.5).abs() < 1e-6);
        assert!(!cc_check(&face, &[1e-6; 3], &set, 0.9, CcVariant::OpenLoopSum));
        assert!(!cc_check(&face, &[1e-6; 3], &set, 0.9, CcVariant::PerObstacle));
        let far = [11.0, 0.5, 0.5];
        assert!(cc_check(&far, &[1.0; 3], &set, 0.999, CcVariant::OpenLoopSum));
        assert!(cc_check(&far, &[1.0; 3], &set, 0.999, CcVariant::PerObstacle));
    }

    #[test]
    fn oracle_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(oracle_p_collision(&[0.0, 0.0], &[1.0, 1.0], &Const(0.0), 10_000, &mut rng).0, 0.0);
        let (p, se) = oracle_p_collision(&[0.0, 0.0], &[1.0, 1.0], &Const(1.0), 10_000, &mut rng);
        assert!((p - 1.0).abs() <= se + 1e-12);
        let (p, se) = oracle_p_collision(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &HalfSpace, 100_000, &mut rng);
        assert!((p - 0.5).abs() <= 3.0 * se, "{p} {se}");
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            oracle_p_collision(&[0.0, 0.0], &[1.0, 1.0], &HalfSpace, 10_000, &mut a),
            oracle_p_collision(&[0.0, 0.0], &[1.0, 1.0], &HalfSpace, 10_000, &mut b)
        );
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[(true, true), (false, false)]), 1.0);
        assert_eq!(accuracy(&[(true, true), (false, true)]), 0.5);
        assert_eq!(accuracy(&[]), 1.0);
    }

    #[test]
    fn half_plane_map_matches_erf() {
        // F = 1 for x > 0 on a fine grid, belief on the boundary
        let g = {
            let mut g = DenseGrid::new([-100, -100, 0], [200, 200, 1], 0.0);
            for i in 0..200usize {
                for j in 0..200usize {
                    if i >= 100 {
                        g.data[i * 200 + j] = 1.0;
                    }
                }
            }
            g
        };
        let map = CumulativeMap::from_grid(PoseBelief::identity(PoseGroup::Se2), 0.1, g, 0.0, 0.0).unwrap();
        let p = p_collision_alpha(&[0.0, 0.0], &[1.0, 1.0], &map, 0.99).unwrap();
        assert!((p - 0.5).abs() < 0.02, "{p}");
    }
}
