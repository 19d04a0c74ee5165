//! Anytime RRT* over workspace points, used as the lead path.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{dist, Budget, PlanningProblem};
use crate::collision::{is_safe_at, SafetyConfig};
use crate::mapping::{CellIndex, CumulativeMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeadParams {
    /// Maximum edge length as a fraction of the bounds diagonal.
    pub step_fraction: f64,
    /// Probability of sampling inside the goal box.
    pub goal_bias: f64,
    /// Positional standard deviation of the synthetic lead belief, in cells.
    pub sigma_cells: f64,
}

impl Default for LeadParams {
    fn default() -> Self {
        LeadParams { step_fraction: 0.05, goal_bias: 0.05, sigma_cells: 0.0 }
    }
}

/// Point validity for the lead, memoised per cell.
struct LeadChecker<'a> {
    map: &'a CumulativeMap,
    sigmas: Vec<f64>,
    safety: SafetyConfig,
    cache: HashMap<CellIndex, bool>,
}

impl LeadChecker<'_> {
    fn valid(&mut self, p: &[f64]) -> bool {
        let c = self.map.cell_of(p);
        if let Some(v) = self.cache.get(&c) {
            return *v;
        }
        let h = self.map.resolution();
        let center: Vec<f64> = (0..p.len()).map(|d| (c[d] as f64 + 0.5) * h).collect();
        let v = is_safe_at(&center, &self.sigmas, self.map, &self.safety).unwrap_or(false);
        self.cache.insert(c, v);
        v
    }

    fn segment_valid(&mut self, a: &[f64], b: &[f64]) -> bool {
        let len = dist(a, b);
        let step = 0.5 * self.map.resolution();
        let n = (len / step).ceil().max(1.0) as usize;
        let mut p = vec![0.0; a.len()];
        for i in 1..=n {
            let t = i as f64 / n as f64;
            for d in 0..a.len() {
                p[d] = a[d] + (b[d] - a[d]) * t;
            }
            if !self.valid(&p) {
                return false;
            }
        }
        true
    }
}

struct Node {
    p: Vec<f64>,
    parent: Option<usize>,
    cost: f64,
    children: Vec<usize>,
}

fn propagate_cost(nodes: &mut [Node], root: usize) {
    let mut stack = vec![root];
    while let Some(i) = stack.pop() {
        let kids = nodes[i].children.clone();
        for k in kids {
            nodes[k].cost = nodes[i].cost + dist(&nodes[i].p, &nodes[k].p);
            stack.push(k);
        }
    }
}

/// Geometric path from the start position into the goal box, or `None`.
pub fn lead_plan<R: Rng + ?Sized>(
    problem: &PlanningProblem,
    params: &LeadParams,
    budget: &Budget,
    rng: &mut R,
) -> Option<Vec<Vec<f64>>> {
    let map = problem.map;
    let dim = map.dim();
    let h = map.resolution();
    let s = params.sigma_cells * h + problem.checker.r_body;
    let mut checker = LeadChecker { map, sigmas: vec![s; dim], safety: problem.checker.safety, cache: HashMap::new() };
    let lo = &problem.bounds_lo;
    let hi = &problem.bounds_hi;
    let diag = problem.diagonal();
    let eta = (params.step_fraction * diag).max(h);
    let gamma = 2.0 * diag;
    let start = problem.start.position().to_vec();
    let goal = &problem.goal;

    let mut nodes = vec![Node { p: start.clone(), parent: None, cost: 0.0, children: Vec::new() }];
    let mut best: Option<usize> = goal.contains(&start).then_some(0);
    let t0 = Instant::now();
    let mut i = 0;
    while budget.allows(i, &t0) {
        i += 1;
        let sample: Vec<f64> = if rng.random::<f64>() < params.goal_bias {
            (0..dim).map(|d| rng.random_range(goal.lo[d]..=goal.hi[d])).collect()
        } else {
            (0..dim).map(|d| rng.random_range(lo[d]..=hi[d])).collect()
        };
        let nearest = (0..nodes.len())
            .min_by(|&a, &b| dist(&nodes[a].p, &sample).total_cmp(&dist(&nodes[b].p, &sample)))
            .expect("tree has a root");
        let d = dist(&nodes[nearest].p, &sample);
        let new_p: Vec<f64> = if d > eta {
            (0..dim).map(|k| nodes[nearest].p[k] + (sample[k] - nodes[nearest].p[k]) * eta / d).collect()
        } else {
            sample
        };
        if !checker.valid(&new_p) || !checker.segment_valid(&nodes[nearest].p, &new_p) {
            continue;
        }
        let n = nodes.len() as f64 + 1.0;
        let radius = (gamma * (n.ln() / n).powf(1.0 / dim as f64)).min(eta);
        let near: Vec<usize> = (0..nodes.len()).filter(|&k| dist(&nodes[k].p, &new_p) <= radius).collect();
        let mut parent = nearest;
        let mut cost = nodes[nearest].cost + dist(&nodes[nearest].p, &new_p);
        for &k in &near {
            let c = nodes[k].cost + dist(&nodes[k].p, &new_p);
            if c < cost && checker.segment_valid(&nodes[k].p, &new_p) {
                parent = k;
                cost = c;
            }
        }
        let id = nodes.len();
        nodes.push(Node { p: new_p.clone(), parent: Some(parent), cost, children: Vec::new() });
        nodes[parent].children.push(id);
        for &k in &near {
            if k == parent {
                continue;
            }
            let c = cost + dist(&new_p, &nodes[k].p);
            if c + 1e-12 < nodes[k].cost && checker.segment_valid(&new_p, &nodes[k].p) {
                if let Some(old) = nodes[k].parent {
                    nodes[old].children.retain(|&x| x != k);
                }
                nodes[k].parent = Some(id);
                nodes[id].children.push(k);
                nodes[k].cost = c;
                propagate_cost(&mut nodes, k);
            }
        }
        if goal.contains(&new_p) && best.is_none_or(|b| cost < nodes[b].cost) {
            best = Some(id);
        }
        // rewiring may have lowered the cost of other goal nodes
        if let Some(b) = best {
            for &k in &near {
                if goal.contains(&nodes[k].p) && nodes[k].cost < nodes[b].cost {
                    best = Some(k);
                }
            }
        }
    }
    let mut cur = best?;
    let mut path = vec![nodes[cur].p.clone()];
    while let Some(p) = nodes[cur].parent {
        cur = p;
        path.push(nodes[cur].p.clone());
    }
    path.reverse();
    Some(path)
}

/// Length of a polyline.
pub fn path_length(path: &[Vec<f64>]) -> f64 {
    path.windows(2).map(|w| dist(&w[0], &w[1])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{Checker, SafetyConfig};
    use crate::geometry::{PoseBelief, PoseGroup};
    use crate::mapping::{DenseGrid, FusionParams};
    use crate::motion::{Belief, ModelKind, ModelParams, MotionModel};
    use crate::planner::{BudgetPolicy, GoalRegion};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn problem<'a>(map: &'a CumulativeMap, model: &'a MotionModel, goal: GoalRegion) -> PlanningProblem<'a> {
        PlanningProblem {
            start: Belief::exact(ModelKind::Unicycle, &[0.0, 0.0, 0.0, 0.0]).unwrap(),
            start_control: None,
            goal,
            map,
            checker: Checker::new(SafetyConfig::default(), 0.0).unwrap(),
            model,
            bounds_lo: vec![-5.0, -10.0],
            bounds_hi: vec![15.0, 10.0],
        }
    }

    fn budget() -> Budget {
        Budget::new(0.3, 2000.0, &BudgetPolicy { wall_cap_factor: 100.0, ..Default::default() })
    }

    #[test]
    fn empty_world_path_is_nearly_straight() {
        let map = CumulativeMap::empty(PoseBelief::identity(PoseGroup::Se2), 0.5, &FusionParams::default());
        let model = MotionModel::new(ModelParams::default()).unwrap();
        let p = problem(&map, &model, GoalRegion::around(&[10.0, 0.0], 0.5).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let path = lead_plan(&p, &LeadParams::default(), &budget(), &mut rng).unwrap();
        assert!(path_length(&path) <= 10.5, "{}", path_length(&path));
    }

    fn grid_with(f: impl Fn(i64, i64) -> bool) -> CumulativeMap {
        let mut g = DenseGrid::new([-10, -20, 0], [40, 40, 1], 0.0);
        for i in 0..40 {
            for j in 0..40 {
                if f(i - 10, j - 20) {
                    g.data[(i * 40 + j) as usize] = 1.0;
                }
            }
        }
        CumulativeMap::from_grid(PoseBelief::identity(PoseGroup::Se2), 0.5, g, 0.0, 1.0).unwrap()
    }

    #[test]
    fn walled_off_goal_has_no_lead() {
        // box of walls around the goal at (10, 0)
        let map = grid_with(|i, j| {
            let ring = |v: i64, c: i64| (v - c).abs() <= 5;
            ring(i, 20) && ring(j, 0) && ((i - 20).abs() >= 4 || j.abs() >= 4)
        });
        let model = MotionModel::new(ModelParams::default()).unwrap();
        let p = problem(&map, &model, GoalRegion::around(&[10.25, 0.25], 0.5).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(lead_plan(&p, &LeadParams::default(), &budget(), &mut rng).is_none());
    }

    #[test]
    fn lead_goes_through_the_gap() {
        // wall at x in [5, 6) with a gap at y in [3, 8)
        let map = grid_with(|i, j| (10..12).contains(&i) && !(6..16).contains(&j));
        let model = MotionModel::new(ModelParams::default()).unwrap();
        let p = problem(&map, &model, GoalRegion::around(&[10.0, 0.0], 0.5).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let path = lead_plan(&p, &LeadParams::default(), &budget(), &mut rng).unwrap();
        // flood fill of free cells from the start must contain every path cell
        let free = |c: [i64; 2]| c[0] >= -10 && c[0] < 30 && c[1] >= -20 && c[1] < 20 && map.value_at_cell(&[c[0], c[1], 0]) == Some(0.0);
        let mut seen = std::collections::HashSet::new();
        let mut q = VecDeque::from([[0i64, 0i64]]);
        seen.insert([0i64, 0i64]);
        while let Some(c) = q.pop_front() {
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let n = [c[0] + dx, c[1] + dy];
                if free(n) && seen.insert(n) {
                    q.push_back(n);
                }
            }
        }
        let mut crossed_gap = false;
        for w in path.windows(2) {
            for k in 0..=20 {
                let t = k as f64 / 20.0;
                let x = w[0][0] + (w[1][0] - w[0][0]) * t;
                let y = w[0][1] + (w[1][1] - w[0][1]) * t;
                let c = map.cell_of(&[x, y]);
                assert!(seen.contains(&[c[0], c[1]]), "path cell {c:?} not reachable");
                if (5.0..6.0).contains(&x) {
                    assert!((3.0..8.0).contains(&y));
                    crossed_gap = true;
                }
            }
        }
        assert!(crossed_gap);
    }
}
