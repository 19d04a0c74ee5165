//! Stable sparse RRT over beliefs.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lift::{lift, LiftStrategy, StateSpace};
use super::{dist, goal_reached, inevitable_collision, Budget, PlanningProblem, Trajectory};
use crate::error::Result;
use crate::geometry::normalize_angle;
use crate::motion::{Belief, Control, ModelKind, MotionModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SstParams {
    /// Best-near radius at the reference diagonal.
    pub delta_bn: f64,
    /// Witness radius at the reference diagonal.
    pub delta_s: f64,
    /// Bounds diagonal at which the radii above apply unscaled.
    pub reference_diagonal: f64,
    /// Metres per radian in the state metric.
    pub angle_weight: f64,
    /// Metres per m/s in the state metric.
    pub velocity_weight: f64,
    /// Share of extensions that steer towards the sample instead of using
    /// a uniformly random control.
    pub directed_fraction: f64,
}

impl Default for SstParams {
    fn default() -> Self {
        SstParams { delta_bn: 0.5, delta_s: 0.25, reference_diagonal: 40.0, angle_weight: 1.0, velocity_weight: 0.5, directed_fraction: 0.5 }
    }
}

/// Tree node as exported in planner traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub position: Vec<f64>,
    pub cost: f64,
    pub active: bool,
}

#[derive(Debug, Clone)]
pub struct SstOutcome {
    pub best: Option<Trajectory>,
    /// `(elapsed budget seconds, cost)` each time the incumbent improved.
    pub history: Vec<(f64, f64)>,
    pub first_solution: Option<f64>,
    pub iterations: usize,
    /// Every node ever added, including pruned ones.
    pub tree: Vec<TraceNode>,
}

impl SstOutcome {
    pub fn cost(&self) -> Option<f64> {
        self.best.as_ref().map(|t| t.total_length)
    }
}

struct Node {
    belief: Belief,
    parent: Option<usize>,
    control: Option<Control>,
    cost: f64,
    active: bool,
    removed: bool,
    children: usize,
}

struct Witness {
    state: Vec<f64>,
    rep: Option<usize>,
}

struct Metric {
    kind: ModelKind,
    angle: f64,
    vel: f64,
}

impl Metric {
    fn state_of(&self, b: &Belief) -> Vec<f64> {
        b.mean.iter().copied().collect()
    }

    fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            ModelKind::Unicycle => {
                let p = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
                let v = (a[2] - b[2]).powi(2) + (a[3] - b[3]).powi(2);
                (p + self.vel * self.vel * v).sqrt()
            }
            ModelKind::FixedWing => {
                let p = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
                let yaw = normalize_angle(a[3] - b[3]);
                let pitch = a[4] - b[4];
                (p + self.angle * self.angle * (yaw * yaw + pitch * pitch)).sqrt()
            }
        }
    }
}

/// Random-duration control heading from `from` towards the geometric part
/// of `target`, clipped to the control bounds.
fn directed_control<R: Rng + ?Sized>(model: &MotionModel, from: &Belief, target: &[f64], rng: &mut R) -> Control {
    let p = model.params();
    let t = rng.random_range(p.t_min..=p.t_max);
    let n = (t / p.dt).round().max(1.0);
    let duration = n * p.dt;
    let u = match p.kind {
        ModelKind::Unicycle => {
            let q = &p.unicycle;
            let dx = target[0] - from.mean[0];
            let dy = target[1] - from.mean[1];
            let d = dx.hypot(dy).max(1e-12);
            let speed = rng.random_range(0.0..=q.v_max);
            let reach = (speed * duration).min(d);
            let clip = |v: f64, m: f64| v.clamp(-m, m);
            vec![
                clip(dx / d * reach, q.max_offset),
                clip(dy / d * reach, q.max_offset),
                clip(dx / d * speed, q.v_max),
                clip(dy / d * speed, q.v_max),
            ]
        }
        ModelKind::FixedWing => {
            let f = &p.fixed_wing;
            let dx = target[0] - from.mean[0];
            let dy = target[1] - from.mean[1];
            let dz = target[2] - from.mean[2];
            let yaw = normalize_angle(dy.atan2(dx) - from.mean[3]);
            let pitch = dz.atan2(dx.hypot(dy)) - from.mean[4];
            vec![
                rng.random_range(f.v_min..=f.v_max),
                (yaw / duration).clamp(-f.omega_max, f.omega_max),
                (pitch / duration).clamp(-f.q_max, f.q_max),
            ]
        }
    };
    Control::new(u, duration)
}

fn inside(p: &[f64], lo: &[f64], hi: &[f64]) -> bool {
    p.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| v >= a && v <= b)
}

fn extract(nodes: &[Node], leaf: usize) -> Vec<(Control, Belief)> {
    let mut out = Vec::new();
    let mut cur = leaf;
    while let (Some(p), Some(c)) = (nodes[cur].parent, nodes[cur].control.as_ref()) {
        out.push((c.clone(), nodes[cur].belief.clone()));
        cur = p;
    }
    out.reverse();
    out
}

/// Grow a belief tree from the problem's start towards its goal region.
pub fn sst_plan<R: Rng + ?Sized>(
    problem: &PlanningProblem,
    lead: Option<&[Vec<f64>]>,
    strategy: &LiftStrategy,
    params: &SstParams,
    budget: &Budget,
    rng: &mut R,
) -> Result<SstOutcome> {
    let map = problem.map;
    let checker = &problem.checker;
    let model = problem.model;
    let p_goal = checker.safety.p_goal;
    let frame = map.frame().clone();
    let trace = |nodes: &[Node]| -> Vec<TraceNode> {
        nodes
            .iter()
            .enumerate()
            .map(|(id, n)| TraceNode {
                id,
                parent: n.parent,
                position: n.belief.position().to_vec(),
                cost: n.cost,
                active: n.active && !n.removed,
            })
            .collect()
    };

    let root = Node {
        belief: problem.start.clone(),
        parent: None,
        control: None,
        cost: 0.0,
        active: true,
        removed: false,
        children: 0,
    };
    if goal_reached(&problem.start, &problem.goal, p_goal) {
        let best = Trajectory::new(problem.start.clone(), Vec::new(), frame, true);
        let nodes = vec![root];
        return Ok(SstOutcome {
            best: Some(best),
            history: vec![(0.0, 0.0)],
            first_solution: Some(0.0),
            iterations: 0,
            tree: trace(&nodes),
        });
    }

    let scale = problem.diagonal() / params.reference_diagonal;
    let delta_bn = params.delta_bn * scale;
    let delta_s = params.delta_s * scale;
    let metric = Metric { kind: model.kind(), angle: params.angle_weight, vel: params.velocity_weight };
    let space = StateSpace::for_problem(problem);
    let stride = 0.5 * map.resolution();

    let mut witnesses = vec![Witness { state: metric.state_of(&problem.start), rep: Some(0) }];
    let mut nodes = vec![root];
    let mut best: Option<(usize, Trajectory)> = None;
    let mut history = Vec::new();
    let mut first_solution = None;

    let t0 = Instant::now();
    let mut i = 0;
    while budget.allows(i, &t0) {
        i += 1;
        let elapsed = budget.elapsed(i, &t0);
        let sample = lift(lead, strategy, first_solution.unwrap_or(elapsed), &space, rng);

        // best-near selection among active nodes
        let mut chosen: Option<usize> = None;
        let mut nearest = (usize::MAX, f64::INFINITY);
        for (k, n) in nodes.iter().enumerate() {
            if !n.active || n.removed {
                continue;
            }
            let d = metric.dist(&metric.state_of(&n.belief), &sample);
            if d < nearest.1 {
                nearest = (k, d);
            }
            if d <= delta_bn && chosen.is_none_or(|c| n.cost < nodes[c].cost) {
                chosen = Some(k);
            }
        }
        let Some(sel) = chosen.or((nearest.0 != usize::MAX).then_some(nearest.0)) else {
            break;
        };

        let control = if rng.random::<f64>() < params.directed_fraction {
            directed_control(model, &nodes[sel].belief, &sample, rng)
        } else {
            model.sample_control(rng)
        };
        let from = nodes[sel].belief.clone();
        let mut last = from.position().to_vec();
        let mut bad = false;
        let end = model.rollout(&from, &control, |s| {
            if bad {
                return;
            }
            if dist(s.position(), &last) >= stride {
                last = s.position().to_vec();
                if !inside(s.position(), &problem.bounds_lo, &problem.bounds_hi) || !checker.is_safe(s, map) {
                    bad = true;
                }
            }
        })?;
        if bad
            || !inside(end.position(), &problem.bounds_lo, &problem.bounds_hi)
            || !checker.is_safe(&end, map)
            || inevitable_collision(&end, Some(&control), map, checker, model)
        {
            continue;
        }
        let cost = nodes[sel].cost + dist(from.position(), end.position());

        // witness test
        let state = metric.state_of(&end);
        let mut wit = (usize::MAX, f64::INFINITY);
        for (k, w) in witnesses.iter().enumerate() {
            let d = metric.dist(&w.state, &state);
            if d < wit.1 {
                wit = (k, d);
            }
        }
        let w = if wit.1 <= delta_s {
            wit.0
        } else {
            witnesses.push(Witness { state: state.clone(), rep: None });
            witnesses.len() - 1
        };
        let prev = witnesses[w].rep;
        if let Some(p) = prev {
            if !nodes[p].removed && nodes[p].cost <= cost {
                continue;
            }
        }

        let id = nodes.len();
        nodes.push(Node {
            belief: end,
            parent: Some(sel),
            control: Some(control),
            cost,
            active: true,
            removed: false,
            children: 0,
        });
        nodes[sel].children += 1;
        witnesses[w].rep = Some(id);

        if let Some(p) = prev {
            nodes[p].active = false;
            // drop inactive leaves, walking up while parents become inactive leaves
            let mut cur = p;
            while !nodes[cur].active && nodes[cur].children == 0 && !nodes[cur].removed {
                if best.as_ref().is_some_and(|(b, _)| *b == cur) {
                    break;
                }
                nodes[cur].removed = true;
                match nodes[cur].parent {
                    Some(par) => {
                        nodes[par].children -= 1;
                        cur = par;
                    }
                    None => break,
                }
            }
        }

        if goal_reached(&nodes[id].belief, &problem.goal, p_goal)
            && best.as_ref().is_none_or(|(_, t)| cost < t.total_length)
        {
            let traj = Trajectory::new(problem.start.clone(), extract(&nodes, id), frame.clone(), true);
            history.push((elapsed, traj.total_length));
            first_solution.get_or_insert(elapsed);
            best = Some((id, traj));
        }
    }

    Ok(SstOutcome {
        best: best.map(|(_, t)| t),
        history,
        first_solution,
        iterations: i,
        tree: trace(&nodes),
    })
}
