//! Lift operators: turn a workspace lead path into a state sampling region.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{dist, PlanningProblem};
use crate::error::{Error, Result};
use crate::motion::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftKind {
    Uniform,
    Rigid,
    Biased,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftStrategy {
    pub kind: LiftKind,
    /// Tube radius for rigid and biased lifts, in metres.
    pub d: f64,
    /// Probability of sampling inside the tube (biased).
    pub p: f64,
    /// Initial adaptive radius.
    pub d0: f64,
    /// Adaptive growth rate in m/s of planning time.
    pub growth_rate: f64,
}

impl Default for LiftStrategy {
    fn default() -> Self {
        LiftStrategy { kind: LiftKind::Adaptive, d: 3.0, p: 0.5, d0: 3.0, growth_rate: 20.0 }
    }
}

impl LiftStrategy {
    pub fn uniform() -> Self {
        LiftStrategy { kind: LiftKind::Uniform, ..Default::default() }
    }

    pub fn rigid(d: f64) -> Self {
        LiftStrategy { kind: LiftKind::Rigid, d, ..Default::default() }
    }

    pub fn biased(d: f64, p: f64) -> Self {
        LiftStrategy { kind: LiftKind::Biased, d, p, ..Default::default() }
    }

    pub fn adaptive(d0: f64, growth_rate: f64) -> Self {
        LiftStrategy { kind: LiftKind::Adaptive, d0, growth_rate, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d >= 0.0 && self.d0 >= 0.0) {
            return Err(Error::Config("lift radii must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config("lift bias probability must lie in [0, 1]".into()));
        }
        if !(self.growth_rate > 0.0) {
            return Err(Error::Config("lift growth rate must be positive".into()));
        }
        Ok(())
    }

    /// Tube radius after `elapsed` seconds of constrained planning.
    pub fn radius(&self, elapsed: f64) -> f64 {
        match self.kind {
            LiftKind::Adaptive => self.d0 + self.growth_rate * elapsed.max(0.0),
            _ => self.d,
        }
    }
}

/// Box the sampler draws from: workspace bounds plus ranges of the
/// non-geometric state components.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub extra_lo: Vec<f64>,
    pub extra_hi: Vec<f64>,
}

impl StateSpace {
    pub fn for_problem(problem: &PlanningProblem) -> Self {
        let params = problem.model.params();
        let (extra_lo, extra_hi) = match params.kind {
            ModelKind::Unicycle => {
                let v = params.unicycle.v_max;
                (vec![-v, -v], vec![v, v])
            }
            ModelKind::FixedWing => {
                let t = 0.5 * PI - params.fixed_wing.theta_margin;
                (vec![-PI, -t], vec![PI, t])
            }
        };
        StateSpace { lo: problem.bounds_lo.clone(), hi: problem.bounds_hi.clone(), extra_lo, extra_hi }
    }

    pub fn workspace_dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diagonal(&self) -> f64 {
        dist(&self.lo, &self.hi)
    }

    fn inside(&self, p: &[f64]) -> bool {
        p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| v >= a && v <= b)
    }

    fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| rng.random_range(*a..=*b)).collect()
    }

    fn extras<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.extra_lo.iter().zip(&self.extra_hi).map(|(a, b)| rng.random_range(*a..=*b)).collect()
    }
}

/// Point at arc length `s` along a polyline.
fn point_along(path: &[Vec<f64>], mut s: f64) -> Vec<f64> {
    for w in path.windows(2) {
        let l = dist(&w[0], &w[1]);
        if s <= l && l > 0.0 {
            let t = s / l;
            return w[0].iter().zip(&w[1]).map(|(a, b)| a + (b - a) * t).collect();
        }
        s -= l;
    }
    path.last().cloned().unwrap_or_default()
}

/// Uniform point in the ball of radius `r`.
fn ball_offset<R: Rng + ?Sized>(dim: usize, r: f64, rng: &mut R) -> Vec<f64> {
    if r <= 0.0 {
        return vec![0.0; dim];
    }
    let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let scale = r * rng.random::<f64>().powf(1.0 / dim as f64) / n;
    g.iter().map(|v| v * scale).collect()
}

fn tube_point<R: Rng + ?Sized>(path: &[Vec<f64>], r: f64, space: &StateSpace, rng: &mut R) -> Vec<f64> {
    let len: f64 = path.windows(2).map(|w| dist(&w[0], &w[1])).sum();
    let dim = space.workspace_dim();
    let mut last = Vec::new();
    for _ in 0..32 {
        let base = point_along(path, rng.random::<f64>() * len);
        let off = ball_offset(dim, r, rng);
        last = base.iter().zip(&off).map(|(a, b)| a + b).collect();
        if space.inside(&last) {
            return last;
        }
    }
    last.iter().zip(space.lo.iter().zip(&space.hi)).map(|(v, (a, b))| v.clamp(*a, *b)).collect()
}

/// Draw one state sample. `elapsed` drives the adaptive radius; callers pass
/// the time of the first solution once one exists so the region stays fixed.
pub fn lift<R: Rng + ?Sized>(
    lead: Option<&[Vec<f64>]>,
    strategy: &LiftStrategy,
    elapsed: f64,
    space: &StateSpace,
    rng: &mut R,
) -> Vec<f64> {
    let path = lead.filter(|p| !p.is_empty());
    let geo = match (strategy.kind, path) {
        (LiftKind::Uniform, _) | (_, None) => space.uniform_point(rng),
        (LiftKind::Rigid, Some(p)) => tube_point(p, strategy.d, space, rng),
        (LiftKind::Biased, Some(p)) => {
            if rng.random::<f64>() < strategy.p {
                tube_point(p, strategy.d, space, rng)
            } else {
                space.uniform_point(rng)
            }
        }
        (LiftKind::Adaptive, Some(p)) => {
            let r = strategy.radius(elapsed).min(space.diagonal());
            tube_point(p, r, space, rng)
        }
    };
    let mut out = geo;
    out.extend(space.extras(rng));
    out
}
