//! Benchmark harnesses: checker accuracy over random box scenes, and lift
//! strategy comparisons on a known map.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::collision::{
    cc_check, is_safe_at, oracle_p_collision, p_collision_alpha, accuracy, CcVariant, Checker, LinearObstacleSet,
    OccupancyField, Polytope, SafetyConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{PoseBelief, PoseGroup};
use crate::mapping::{CumulativeMap, DenseGrid};
use crate::motion::{Belief, ModelParams, MotionModel};
use crate::planner::{plan, GoalRegion, LiftStrategy, PlannerConfig, PlannerMode, PlanningProblem};
use crate::sim::{builtin_world, Aabb, World};

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

/// Occupancy grid of a set of boxes: each cell holds the covered fraction
/// of its volume (clamped to 1 where boxes overlap).
pub fn rasterize(boxes: &[Aabb], lo: &[f64], hi: &[f64], h: f64) -> DenseGrid<f64> {
    let dim = lo.len();
    let mut c_lo = [0i64; 3];
    let mut c_hi = [0i64; 3];
    for d in 0..dim {
        c_lo[d] = (lo[d] / h).floor() as i64;
        c_hi[d] = (hi[d] / h).ceil() as i64 - 1;
    }
    let mut g = DenseGrid::spanning(c_lo, c_hi, 0.0);
    for b in boxes {
        let mut r = [(0i64, 0i64); 3];
        for d in 0..3 {
            r[d] = if d < dim {
                (((b.lo[d] / h).floor() as i64).max(c_lo[d]), ((b.hi[d] / h).ceil() as i64 - 1).min(c_hi[d]))
            } else {
                (0, 0)
            };
        }
        let overlap = |d: usize, i: i64| -> f64 {
            if d >= dim {
                return 1.0;
            }
            let a = i as f64 * h;
            ((b.hi[d].min(a + h) - b.lo[d].max(a)) / h).max(0.0)
        };
        for i in r[0].0..=r[0].1 {
            let fx = overlap(0, i);
            for j in r[1].0..=r[1].1 {
                let fy = overlap(1, j);
                for k in r[2].0..=r[2].1 {
                    if let Some(v) = g.get_mut(&[i, j, k]) {
                        *v = (*v + fx * fy * overlap(2, k)).min(1.0);
                    }
                }
            }
        }
    }
    g
}

/// Fully known map of a world inside its bounds; probabilities are the
/// covered cell fractions and the collision field uses them unchanged.
pub fn world_map(world: &World, h: f64) -> Result<CumulativeMap> {
    let grid = rasterize(&world.boxes, &world.bounds_lo, &world.bounds_hi, h);
    let group = PoseGroup::for_workspace(world.dim)?;
    CumulativeMap::from_grid(PoseBelief::identity(group), h, grid, 0.0, 0.0)
}

/// Random axis-aligned cubes with a bucket index for point queries.
pub struct BoxScene {
    pub dim: usize,
    pub extent: f64,
    pub boxes: Vec<Aabb>,
    bucket: f64,
    per_axis: usize,
    buckets: Vec<Vec<usize>>,
}

impl BoxScene {
    pub fn new(dim: usize, extent: f64, boxes: Vec<Aabb>) -> Self {
        let bucket = 4.0;
        let per_axis = (extent / bucket).ceil().max(1.0) as usize;
        let mut buckets = vec![Vec::new(); per_axis.pow(dim as u32)];
        for (id, b) in boxes.iter().enumerate() {
            let range: Vec<(usize, usize)> = (0..dim)
                .map(|d| (Self::axis_bucket(b.lo[d], bucket, per_axis), Self::axis_bucket(b.hi[d], bucket, per_axis)))
                .collect();
            let mut idx = vec![0usize; dim];
            for d in 0..dim {
                idx[d] = range[d].0;
            }
            loop {
                let flat = idx.iter().fold(0, |acc, &i| acc * per_axis + i);
                buckets[flat].push(id);
                let mut d = 0;
                loop {
                    if d == dim {
                        break;
                    }
                    if idx[d] < range[d].1 {
                        idx[d] += 1;
                        break;
                    }
                    idx[d] = range[d].0;
                    d += 1;
                }
                if d == dim {
                    break;
                }
            }
        }
        BoxScene { dim, extent, boxes, bucket, per_axis, buckets }
    }

    fn axis_bucket(v: f64, bucket: f64, n: usize) -> usize {
        ((v / bucket).floor().max(0.0) as usize).min(n - 1)
    }

    /// `n` cubes with sides uniform in `[side_lo, side_hi]` placed uniformly
    /// inside `[0, extent]^dim`.
    pub fn random<R: Rng + ?Sized>(dim: usize, extent: f64, n: usize, side: (f64, f64), rng: &mut R) -> Self {
        let boxes = (0..n)
            .map(|_| {
                let s = rng.random_range(side.0..=side.1);
                let lo: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..=extent - s)).collect();
                let hi = lo.iter().map(|v| v + s).collect();
                Aabb::new(lo, hi)
            })
            .collect();
        Self::new(dim, extent, boxes)
    }

    pub fn prefix(&self, n: usize) -> Self {
        Self::new(self.dim, self.extent, self.boxes[..n.min(self.boxes.len())].to_vec())
    }

    pub fn map(&self, h: f64) -> Result<CumulativeMap> {
        let lo = vec![0.0; self.dim];
        let hi = vec![self.extent; self.dim];
        let group = PoseGroup::for_workspace(self.dim)?;
        CumulativeMap::from_grid(PoseBelief::identity(group), h, rasterize(&self.boxes, &lo, &hi, h), 0.0, 0.0)
    }

    pub fn obstacles(&self) -> LinearObstacleSet {
        LinearObstacleSet { obstacles: self.boxes.iter().map(|b| Polytope::from_box(&b.lo, &b.hi)).collect() }
    }
}

impl OccupancyField for BoxScene {
    fn occupancy(&self, p: &[f64]) -> f64 {
        if p.iter().any(|v| *v < 0.0 || *v > self.extent) {
            return 0.0;
        }
        let flat = p.iter().fold(0, |acc, v| acc * self.per_axis + Self::axis_bucket(*v, self.bucket, self.per_axis));
        self.buckets[flat].iter().any(|&i| self.boxes[i].contains(p)) as u8 as f64
    }

    fn near(&self, p: &[f64], radius: f64) -> bool {
        self.boxes.iter().any(|b| b.distance(p) <= radius)
    }
}

/// Grid of the collision-checker accuracy benchmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionBenchSpec {
    pub n_o: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub p_safe: Vec<f64>,
    pub beliefs: usize,
    pub mc_samples: usize,
    pub alpha: f64,
    pub resolution: f64,
    pub dim: usize,
    pub extent: f64,
    /// Cube side range in metres.
    pub side: (f64, f64),
    pub seed: u64,
}

impl Default for CollisionBenchSpec {
    fn default() -> Self {
        CollisionBenchSpec {
            n_o: vec![0, 100, 200],
            sigmas: vec![0.5, 1.5, 3.0],
            p_safe: vec![0.9, 0.95],
            beliefs: 1000,
            mc_samples: 10_000,
            alpha: 0.99,
            resolution: 0.5,
            dim: 3,
            extent: 40.0,
            side: (1.0, 4.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionRow {
    pub n_o: usize,
    pub sigma: f64,
    pub p_safe: f64,
    pub method: String,
    pub accuracy: f64,
    pub mean_time_ns: f64,
    pub var_time_ns: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}

/// Evaluate the alpha-kernel checker and both chance-constraint variants on
/// the same beliefs in every `(n_o, sigma, p_safe)` cell.
///
/// Scenes are nested (the `n_o = 200` scene contains the `n_o = 100` one)
/// and belief means are shared across scenes, so cells differ only in the
/// parameter that varies.
pub fn bench_collision(spec: &CollisionBenchSpec) -> Result<Vec<CollisionRow>> {
    if spec.beliefs == 0 || spec.mc_samples == 0 || !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(Error::Config("collision benchmark needs beliefs, samples and alpha in (0, 1)".into()));
    }
    if !(2..=3).contains(&spec.dim) {
        return Err(Error::Config("collision benchmark dimension must be 2 or 3".into()));
    }
    for &p in &spec.p_safe {
        SafetyConfig::new(p, spec.alpha, 0.9).map_err(|e| Error::Config(e.to_string()))?;
    }
    let n_max = spec.n_o.iter().copied().max().unwrap_or(0);
    let all = BoxScene::random(spec.dim, spec.extent, n_max, spec.side, &mut stream(spec.seed, 1));
    let mut rows = Vec::new();
    for &n_o in &spec.n_o {
        let scene = all.prefix(n_o);
        let map = scene.map(spec.resolution)?;
        let obs = scene.obstacles();
        for (si, &sigma) in spec.sigmas.iter().enumerate() {
            let mut mean_rng = stream(spec.seed, 100 + si as u64);
            let means: Vec<Vec<f64>> = (0..spec.beliefs)
                .map(|_| (0..spec.dim).map(|_| mean_rng.random_range(0.0..=spec.extent)).collect())
                .collect();
            let sigmas = vec![sigma; spec.dim];
            let truth_p: Vec<f64> = means
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let mut r = stream(spec.seed ^ 0x5eed, (si * spec.beliefs + i) as u64);
                    oracle_p_collision(m, &sigmas, &scene, spec.mc_samples, &mut r).0
                })
                .collect();
            for &p_safe in &spec.p_safe {
                let cfg = SafetyConfig::new(p_safe, spec.alpha, 0.9)?;
                let truth: Vec<bool> = truth_p.iter().map(|p| 1.0 - p >= p_safe).collect();
                let methods: [(&str, Box<dyn Fn(&[f64]) -> Result<bool>>); 3] = [
                    ("alpha_kernel", Box::new(|m: &[f64]| is_safe_at(m, &sigmas, &map, &cfg))),
                    ("cc_open_loop_sum", Box::new(|m: &[f64]| Ok(cc_check(m, &sigmas, &obs, p_safe, CcVariant::OpenLoopSum)))),
                    ("cc_per_obstacle", Box::new(|m: &[f64]| Ok(cc_check(m, &sigmas, &obs, p_safe, CcVariant::PerObstacle)))),
                ];
                for (name, f) in methods.iter() {
                    let mut outcomes = Vec::with_capacity(means.len());
                    let mut times = Vec::with_capacity(means.len());
                    for (m, t) in means.iter().zip(&truth) {
                        let t0 = Instant::now();
                        let ok = f(m)?;
                        times.push(t0.elapsed().as_nanos() as f64);
                        outcomes.push((ok, *t));
                    }
                    let (mean_time_ns, var_time_ns) = mean_var(&times);
                    rows.push(CollisionRow {
                        n_o,
                        sigma,
                        p_safe,
                        method: name.to_string(),
                        accuracy: accuracy(&outcomes),
                        mean_time_ns,
                        var_time_ns,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_collision_csv(rows: &[CollisionRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "n_o,sigma,p_safe,method,accuracy,mean_time_ns,var_time_ns")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{:.6},{:.1},{:.1}",
            r.n_o, r.sigma, r.p_safe, r.method, r.accuracy, r.mean_time_ns, r.var_time_ns
        )?;
    }
    Ok(())
}

/// Checker value and sampled truth for one random belief.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SoundnessSample {
    pub sigma: f64,
    pub p_alpha: f64,
    pub p_mc: f64,
    pub standard_error: f64,
}

/// Random beliefs with `sigma` uniform in `sigma_range`, half of them
/// centred near an obstacle face, compared against Monte-Carlo truth.
pub fn soundness_samples(
    n: usize,
    mc_samples: usize,
    sigma_range: (f64, f64),
    alpha: f64,
    resolution: f64,
    seed: u64,
) -> Result<Vec<SoundnessSample>> {
    let spec = CollisionBenchSpec::default();
    let scene = BoxScene::random(spec.dim, spec.extent, 100, spec.side, &mut stream(seed, 1));
    let map = scene.map(resolution)?;
    let mut rng = stream(seed, 2);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let sigma = rng.random_range(sigma_range.0..=sigma_range.1);
        let mean: Vec<f64> = if i % 2 == 0 {
            (0..spec.dim).map(|_| rng.random_range(0.0..=spec.extent)).collect()
        } else {
            let b = &scene.boxes[rng.random_range(0..scene.boxes.len())];
            (0..spec.dim)
                .map(|d| {
                    let v = rng.random_range(b.lo[d] - 2.0 * sigma..=b.hi[d] + 2.0 * sigma);
                    v.clamp(0.0, spec.extent)
                })
                .collect()
        };
        let sigmas = vec![sigma; spec.dim];
        let p_alpha = p_collision_alpha(&mean, &sigmas, &map, alpha)?;
        let mut r = stream(seed ^ 0xabcd, i as u64);
        let (p_mc, standard_error) = oracle_p_collision(&mean, &sigmas, &scene, mc_samples, &mut r);
        out.push(SoundnessSample { sigma, p_alpha, p_mc, standard_error });
    }
    Ok(out)
}

/// Planner configuration under comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchStrategy {
    /// Single layer: uniform sampling over the full budget.
    Slp,
    Rigid(f64),
    /// Biased tube sampling with the given in-tube probability.
    Biased(f64),
    Adaptive,
}

impl BenchStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            BenchStrategy::Slp => "slp",
            BenchStrategy::Rigid(_) => "rigid",
            BenchStrategy::Biased(_) => "biased",
            BenchStrategy::Adaptive => "adaptive",
        }
    }

    pub fn param(&self) -> Option<f64> {
        match self {
            BenchStrategy::Rigid(v) | BenchStrategy::Biased(v) => Some(*v),
            _ => None,
        }
    }

    /// Planner settings for this strategy on top of `base`.
    pub fn configure(&self, base: &PlannerConfig) -> PlannerConfig {
        let mut c = base.clone();
        match *self {
            BenchStrategy::Slp => c.mode = PlannerMode::SingleLayer,
            BenchStrategy::Rigid(d) => c.lift = LiftStrategy::rigid(d),
            BenchStrategy::Biased(p) => c.lift = LiftStrategy::biased(base.lift.d, p),
            BenchStrategy::Adaptive => c.lift = LiftStrategy::adaptive(base.lift.d0, base.lift.growth_rate),
        }
        if *self != BenchStrategy::Slp {
            c.mode = PlannerMode::MultiLayer;
        }
        c
    }
}

impl fmt::Display for BenchStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.param() {
            Some(v) => write!(f, "{}:{v}", self.name()),
            None => write!(f, "{}", self.name()),
        }
    }
}

impl FromStr for BenchStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::Config(format!("strategy '{s}' needs a value, e.g. {name}:1.0")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("strategy '{s}': {e}")))
        };
        match name {
            "slp" => Ok(BenchStrategy::Slp),
            "rigid" => Ok(BenchStrategy::Rigid(num(arg)?)),
            "biased" => Ok(BenchStrategy::Biased(num(arg)?)),
            "adaptive" => Ok(BenchStrategy::Adaptive),
            _ => Err(Error::Config(format!("unknown strategy '{s}'"))),
        }
    }
}

/// Adaptive lift scaled to the 30 m corridor: growing at 20 m/s the tube
/// covers the whole world a fraction of a second into the budget.
pub const DESK_ADAPTIVE: LiftStrategy =
    LiftStrategy { kind: crate::planner::LiftKind::Adaptive, d: 3.0, p: 0.5, d0: 1.0, growth_rate: 2.0 };

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerBenchSpec {
    pub scenario: String,
    pub strategies: Vec<BenchStrategy>,
    pub seeds: usize,
    pub seed: u64,
    pub planner: PlannerConfig,
    pub safety: SafetyConfig,
    pub resolution: f64,
    pub r_body: f64,
}

impl Default for PlannerBenchSpec {
    fn default() -> Self {
        PlannerBenchSpec {
            scenario: "corridor3d".into(),
            strategies: vec![
                BenchStrategy::Slp,
                BenchStrategy::Rigid(0.0),
                BenchStrategy::Rigid(1.0),
                BenchStrategy::Rigid(3.0),
                BenchStrategy::Rigid(12.0),
                BenchStrategy::Biased(0.5),
                BenchStrategy::Adaptive,
            ],
            seeds: 200,
            seed: 0,
            planner: PlannerConfig { lift: DESK_ADAPTIVE, ..Default::default() },
            safety: SafetyConfig::default(),
            resolution: 0.2,
            r_body: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannerRow {
    pub strategy: String,
    pub param: Option<f64>,
    pub seed: u64,
    pub solved: bool,
    pub length: Option<f64>,
    /// Budget seconds (lead included) until the first solution.
    pub time_to_first: Option<f64>,
    /// Whether the incumbent cost never increased during the run.
    pub monotone: bool,
    pub nodes: usize,
    pub budget_lead: f64,
    pub budget_constrained: f64,
}

/// A scenario world together with the model that moves in it.
pub fn scenario(name: &str) -> Result<(World, MotionModel)> {
    let world = builtin_world(name, 0.3)?;
    let params = if world.dim == 3 { ModelParams::fixed_wing() } else { ModelParams::default() };
    Ok((world, MotionModel::new(params)?))
}

/// Solve the scenario's start-to-goal problem on its known map once per
/// seed and strategy.
pub fn bench_planner(spec: &PlannerBenchSpec) -> Result<Vec<PlannerRow>> {
    bench_planner_with(spec, |_| {})
}

/// As [`bench_planner`], reporting each row as it is produced.
pub fn bench_planner_with(spec: &PlannerBenchSpec, mut progress: impl FnMut(&PlannerRow)) -> Result<Vec<PlannerRow>> {
    let (world, model) = scenario(&spec.scenario)?;
    let map = world_map(&world, spec.resolution)?;
    let checker = Checker::new(spec.safety, spec.r_body)?;
    let mut mean = vec![0.0; model.kind().state_dim()];
    mean[..world.dim].copy_from_slice(&world.start);
    let start = Belief::exact(model.kind(), &mean)?;
    let problem = PlanningProblem {
        start,
        start_control: None,
        goal: GoalRegion::new(world.goal_lo.clone(), world.goal_hi.clone())?,
        map: &map,
        checker,
        model: &model,
        bounds_lo: world.bounds_lo.clone(),
        bounds_hi: world.bounds_hi.clone(),
    };
    let mut rows = Vec::new();
    for strategy in &spec.strategies {
        let cfg = strategy.configure(&spec.planner);
        let lead_time = if cfg.mode == PlannerMode::MultiLayer { cfg.budget_lead } else { 0.0 };
        let budget_c = if cfg.mode == PlannerMode::MultiLayer { cfg.budget_constrained } else { cfg.total_budget() };
        for k in 0..spec.seeds {
            let seed = spec.seed.wrapping_add(k as u64);
            let out = plan(&problem, &cfg, seed)?;
            let sst = out.sst.as_ref();
            let monotone = sst.is_none_or(|s| s.history.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
            let row = PlannerRow {
                strategy: strategy.name().into(),
                param: strategy.param(),
                seed,
                solved: out.trajectory.is_some(),
                length: out.trajectory.as_ref().map(|t| t.total_length),
                time_to_first: sst.and_then(|s| s.first_solution).map(|t| lead_time + t),
                monotone,
                nodes: sst.map_or(0, |s| s.tree.len()),
                budget_lead: lead_time,
                budget_constrained: budget_c,
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn write_planner_csv(rows: &[PlannerRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "strategy,param,seed,solved,length,time_to_first,monotone,nodes,budget_lead,budget_constrained")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            r.strategy,
            r.param.map(|v| v.to_string()).unwrap_or_default(),
            r.seed,
            r.solved,
            opt(r.length),
            opt(r.time_to_first),
            r.monotone,
            r.nodes,
            r.budget_lead,
            r.budget_constrained
        )?;
    }
    Ok(())
}

/// Success rate per strategy label (`name` or `name:param`), in input order.
pub fn success_rates(rows: &[PlannerRow]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, usize, usize)> = Vec::new();
    for r in rows {
        let label = match r.param {
            Some(p) => format!("{}:{p}", r.strategy),
            None => r.strategy.clone(),
        };
        match out.iter_mut().find(|(l, _, _)| *l == label) {
            Some(e) => {
                e.1 += r.solved as usize;
                e.2 += 1;
            }
            None => out.push((label, r.solved as usize, 1)),
        }
    }
    out.into_iter().map(|(l, s, n)| (l, s as f64 / n as f64)).collect()
}
