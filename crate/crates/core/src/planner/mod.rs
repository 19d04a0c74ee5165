//! Multi-layered planning: a geometric lead path, a lift operator turning
//! it into a sampling region, and a belief-space SST tree.

pub mod lead;
pub mod lift;
pub mod sst;
pub mod trajectory;

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::collision::Checker;
use crate::error::{Error, Result};
use crate::mapping::CumulativeMap;
use crate::motion::{Belief, Control, MotionModel};

pub use lead::{lead_plan, LeadParams};
pub use lift::{lift, LiftKind, LiftStrategy, StateSpace};
pub use sst::{sst_plan, SstOutcome, SstParams, TraceNode};
pub use trajectory::{validate_trajectory, Trajectory};

/// Axis-aligned box in the workspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl GoalRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid("goal corners must share a non-zero dimension"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::invalid("goal box must be non-empty"));
        }
        Ok(GoalRegion { lo, hi })
    }

    /// Box of half-width `r` around `center`.
    pub fn around(center: &[f64], r: f64) -> Result<Self> {
        Self::new(center.iter().map(|c| c - r).collect(), center.iter().map(|c| c + r).collect())
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn shifted(&self, offset: &[f64]) -> Self {
        GoalRegion {
            lo: self.lo.iter().zip(offset).map(|(a, o)| a - o).collect(),
            hi: self.hi.iter().zip(offset).map(|(a, o)| a - o).collect(),
        }
    }
}

/// Probability mass of a belief's position inside the goal box, using the
/// diagonal of the positional covariance.
pub fn goal_probability(b: &Belief, goal: &GoalRegion) -> f64 {
    let pos = b.position();
    let cov = b.position_cov();
    let mut p = 1.0;
    for d in 0..pos.len().min(goal.lo.len()) {
        let s = cov[(d, d)].max(0.0).sqrt();
        let mass = if s <= 0.0 {
            (pos[d] >= goal.lo[d] && pos[d] <= goal.hi[d]) as u8 as f64
        } else {
            let k = s * std::f64::consts::SQRT_2;
            0.5 * (erf((goal.hi[d] - pos[d]) / k) - erf((goal.lo[d] - pos[d]) / k))
        };
        p *= mass;
    }
    p
}

pub fn goal_reached(b: &Belief, goal: &GoalRegion, p_goal: f64) -> bool {
    goal_probability(b, goal) >= p_goal
}

/// Whether braking from `b` leaves the safe set at some point.
///
/// `current` is the control applied when braking starts.
pub fn inevitable_collision(
    b: &Belief,
    current: Option<&Control>,
    map: &CumulativeMap,
    checker: &Checker,
    model: &MotionModel,
) -> bool {
    let stride = 0.5 * map.resolution();
    let mut cur = b.clone();
    let mut last = b.position().to_vec();
    for c in model.braking_sequence(b, current) {
        let mut bad = false;
        let res = model.rollout(&cur, &c, |s| {
            if bad {
                return;
            }
            let moved = dist(s.position(), &last);
            if moved >= stride {
                last = s.position().to_vec();
                if !checker.is_safe(s, map) {
                    bad = true;
                }
            }
        });
        match res {
            Ok(end) => cur = end,
            Err(_) => return true,
        }
        if bad {
            return true;
        }
    }
    !checker.is_safe(&cur, map)
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// How planning budgets are enforced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetPolicy {
    /// Use iteration counts derived from the rates below instead of wall time.
    pub frozen_clock: bool,
    /// Lead iterations per budgeted second.
    pub lead_rate: f64,
    /// Constrained-planner iterations per budgeted second.
    pub sst_rate: f64,
    /// Hard wall-clock cap as a multiple of the budget (frozen clock only).
    pub wall_cap_factor: f64,
}

impl Default for BudgetPolicy {
    fn default() -> Self {
        BudgetPolicy { frozen_clock: true, lead_rate: 10000.0, sst_rate: 1500.0, wall_cap_factor: 10.0 }
    }
}

/// Iteration/time budget for one planner layer.
#[derive(Debug, Clone, Copy)]
pub struct Budget {
    pub seconds: f64,
    pub iterations: Option<usize>,
    pub rate: f64,
    pub wall_cap: Duration,
}

impl Budget {
    pub fn new(seconds: f64, rate: f64, policy: &BudgetPolicy) -> Self {
        let iterations = policy.frozen_clock.then(|| (seconds * rate).round().max(1.0) as usize);
        let cap = if policy.frozen_clock { seconds * policy.wall_cap_factor } else { seconds };
        Budget { seconds, iterations, rate, wall_cap: Duration::from_secs_f64(cap.max(0.0)) }
    }

    /// Whether iteration `i` (0-based) may run, given the wall clock start.
    pub fn allows(&self, i: usize, start: &Instant) -> bool {
        if let Some(n) = self.iterations {
            if i >= n {
                return false;
            }
        }
        // the clock is read sparsely to keep it cheap
        if i % 16 == 0 && start.elapsed() >= self.wall_cap {
            return false;
        }
        true
    }

    /// Elapsed budget time after `i` iterations (virtual under a frozen clock).
    pub fn elapsed(&self, i: usize, start: &Instant) -> f64 {
        if self.iterations.is_some() {
            i as f64 / self.rate
        } else {
            start.elapsed().as_secs_f64()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    MultiLayer,
    SingleLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub mode: PlannerMode,
    pub budget_lead: f64,
    pub budget_constrained: f64,
    pub lift: LiftStrategy,
    pub lead: LeadParams,
    pub sst: SstParams,
    pub budget: BudgetPolicy,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            mode: PlannerMode::MultiLayer,
            budget_lead: 0.3,
            budget_constrained: 1.2,
            lift: LiftStrategy::default(),
            lead: LeadParams::default(),
            sst: SstParams::default(),
            budget: BudgetPolicy::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget_lead > 0.0 && self.budget_constrained > 0.0) {
            return Err(Error::Config("planner budgets must be positive".into()));
        }
        self.lift.validate()?;
        if !(self.budget.lead_rate > 0.0 && self.budget.sst_rate > 0.0 && self.budget.wall_cap_factor > 0.0) {
            return Err(Error::Config("planner budget rates must be positive".into()));
        }
        Ok(())
    }

    pub fn total_budget(&self) -> f64 {
        self.budget_lead + self.budget_constrained
    }
}

/// One planning query.
pub struct PlanningProblem<'a> {
    pub start: Belief,
    /// Control being applied at the start, if any.
    pub start_control: Option<Control>,
    pub goal: GoalRegion,
    pub map: &'a CumulativeMap,
    pub checker: Checker,
    pub model: &'a MotionModel,
    /// Sampling bounds in the workspace.
    pub bounds_lo: Vec<f64>,
    pub bounds_hi: Vec<f64>,
}

impl PlanningProblem<'_> {
    pub fn diagonal(&self) -> f64 {
        dist(&self.bounds_lo, &self.bounds_hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Solved,
    NoSolution,
    StartUnsafe,
}

/// Result of a full multi-layered (or single-layered) query.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub status: PlanStatus,
    pub trajectory: Option<Trajectory>,
    pub lead: Option<Vec<Vec<f64>>>,
    pub sst: Option<SstOutcome>,
    pub lead_wall: f64,
    pub sst_wall: f64,
}

/// Seed of the stream used by one layer of a query.
fn layer_rng(seed: u64, layer: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(layer);
    r
}

/// Run the configured planner on one problem.
pub fn plan(problem: &PlanningProblem, cfg: &PlannerConfig, seed: u64) -> Result<PlanOutcome> {
    cfg.validate()?;
    if !problem.checker.is_safe(&problem.start, problem.map) {
        return Ok(PlanOutcome {
            status: PlanStatus::StartUnsafe,
            trajectory: None,
            lead: None,
            sst: None,
            lead_wall: 0.0,
            sst_wall: 0.0,
        });
    }
    let (lead, lead_wall, strategy, budget_c) = match cfg.mode {
        PlannerMode::SingleLayer => (None, 0.0, LiftStrategy::uniform(), cfg.total_budget()),
        PlannerMode::MultiLayer => {
            let t0 = Instant::now();
            let budget = Budget::new(cfg.budget_lead, cfg.budget.lead_rate, &cfg.budget);
            let mut rng = layer_rng(seed, 1);
            let path = lead_plan(problem, &cfg.lead, &budget, &mut rng);
            (path, t0.elapsed().as_secs_f64(), cfg.lift.clone(), cfg.budget_constrained)
        }
    };
    let t1 = Instant::now();
    let budget = Budget::new(budget_c, cfg.budget.sst_rate, &cfg.budget);
    let mut rng = layer_rng(seed, 2);
    let out = sst_plan(problem, lead.as_deref(), &strategy, &cfg.sst, &budget, &mut rng)?;
    let sst_wall = t1.elapsed().as_secs_f64();
    let trajectory = out.best.clone();
    Ok(PlanOutcome {
        status: if trajectory.is_some() { PlanStatus::Solved } else { PlanStatus::NoSolution },
        trajectory,
        lead,
        sst: Some(out),
        lead_wall,
        sst_wall,
    })
}
