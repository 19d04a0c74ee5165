//! Deterministic simulation: box worlds, ray-cast range sensing and noisy
//! open-loop execution.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::submap::{Beam, Scan};
use crate::motion::{Belief, MotionModel};
use crate::planner::{GoalRegion, Trajectory};

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Aabb {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Aabb { lo, hi }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| v >= a && v <= b)
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (a, b))| {
                let d = (a - v).max(0.0).max(v - b);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Entry distance of the ray `o + t d`, `t >= 0`, if it hits.
    pub fn ray(&self, o: &[f64], d: &[f64]) -> Option<f64> {
        let mut t0 = 0.0_f64;
        let mut t1 = f64::INFINITY;
        for a in 0..o.len() {
            if d[a].abs() < 1e-15 {
                if o[a] < self.lo[a] || o[a] > self.hi[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut ta, mut tb) = ((self.lo[a] - o[a]) * inv, (self.hi[a] - o[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// Ground-truth environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    pub name: String,
    pub dim: usize,
    pub bounds_lo: Vec<f64>,
    pub bounds_hi: Vec<f64>,
    #[serde(default)]
    pub boxes: Vec<Aabb>,
    /// Suggested start position.
    pub start: Vec<f64>,
    /// Suggested goal box.
    pub goal_lo: Vec<f64>,
    pub goal_hi: Vec<f64>,
}

impl World {
    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if !(2..=3).contains(&d) {
            return Err(Error::Config(format!("world dimension must be 2 or 3, got {d}")));
        }
        let check = |v: &[f64], what: &str| {
            if v.len() != d {
                Err(Error::Config(format!("{what} must have {d} coordinates")))
            } else {
                Ok(())
            }
        };
        check(&self.bounds_lo, "bounds_lo")?;
        check(&self.bounds_hi, "bounds_hi")?;
        check(&self.start, "start")?;
        check(&self.goal_lo, "goal_lo")?;
        check(&self.goal_hi, "goal_hi")?;
        let bounds = Aabb::new(self.bounds_lo.clone(), self.bounds_hi.clone());
        for (i, b) in self.boxes.iter().enumerate() {
            check(&b.lo, "box corner")?;
            check(&b.hi, "box corner")?;
            if b.lo.iter().zip(&b.hi).any(|(a, c)| !(a < c)) {
                return Err(Error::Config(format!("box {i} is degenerate")));
            }
            if !bounds.contains(&b.lo) || !bounds.contains(&b.hi) {
                return Err(Error::Config(format!("box {i} leaves the world bounds")));
            }
        }
        GoalRegion::new(self.goal_lo.clone(), self.goal_hi.clone()).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let w: World = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("world serialises")
    }

    pub fn goal(&self) -> GoalRegion {
        GoalRegion { lo: self.goal_lo.clone(), hi: self.goal_hi.clone() }
    }

    /// Whether a disc/ball of radius `r` at `p` touches any obstacle.
    pub fn collides(&self, p: &[f64], r: f64) -> bool {
        self.boxes.iter().any(|b| b.distance(p) < r)
    }

    /// Distance to the nearest obstacle along a ray, if within `max`.
    pub fn raycast(&self, o: &[f64], d: &[f64], max: f64) -> Option<f64> {
        self.boxes.iter().filter_map(|b| b.ray(o, d)).filter(|t| *t <= max).min_by(f64::total_cmp)
    }
}

fn planar(name: &str, lo: [f64; 2], hi: [f64; 2], boxes: Vec<([f64; 2], [f64; 2])>, start: [f64; 2], goal: [f64; 2], r: f64) -> World {
    World {
        name: name.into(),
        dim: 2,
        bounds_lo: lo.to_vec(),
        bounds_hi: hi.to_vec(),
        boxes: boxes.into_iter().map(|(a, b)| Aabb::new(a.to_vec(), b.to_vec())).collect(),
        start: start.to_vec(),
        goal_lo: vec![goal[0] - r, goal[1] - r],
        goal_hi: vec![goal[0] + r, goal[1] + r],
    }
}

/// Breakwater: a row of 14.5 m by 12 m blocks separated by 4 m gaps, with
/// one block directly between start and goal.
pub fn breakwater2d() -> World {
    let (len, width, gap) = (14.5, 12.0, 4.0);
    let x0 = 8.0;
    let pitch = len + gap;
    let boxes = (-1..=1)
        .map(|k| {
            let c = k as f64 * pitch;
            ([x0, c - 0.5 * len], [x0 + width, c + 0.5 * len])
        })
        .collect();
    let half = pitch + 0.5 * len;
    planar("breakwater2d", [-4.0, -half], [x0 + width + 12.0, half], boxes, [0.0, 0.0], [x0 + width + 8.0, 0.0], 1.5)
}

/// Canyon: two long walls with a narrow offset passage in the middle.
pub fn canyon2d() -> World {
    let boxes = vec![
        ([5.0, 6.0], [35.0, 8.0]),
        ([5.0, -8.0], [35.0, -6.0]),
        // constriction leaving a 3 m passage at y in [1, 4]
        ([18.0, 4.0], [22.0, 6.0]),
        ([18.0, -6.0], [22.0, 1.0]),
    ];
    planar("canyon2d", [-5.0, -15.0], [45.0, 15.0], boxes, [0.0, 0.0], [40.0, 0.0], 1.5)
}

pub fn open2d() -> World {
    planar("open2d", [-10.0, -10.0], [20.0, 10.0], Vec::new(), [0.0, 0.0], [10.0, 0.0], 1.0)
}

/// Corridor with two cross walls, each pierced by one window; the windows
/// are offset so that no straight line joins start and goal.
pub fn corridor3d() -> World {
    let (lx, ly, lz) = (30.0, 12.0, 8.0);
    let t = 1.0;
    let mut boxes = Vec::new();
    // wall at x in [10, 11] with a window y in [1, 5], z in [1, 4]
    // wall at x in [20, 21] with a window y in [7, 11], z in [4, 7]
    for (x, wy, wz) in [(10.0, (1.0, 5.0), (1.0, 4.0)), (20.0, (7.0, 11.0), (4.0, 7.0))] {
        let (y0, y1) = wy;
        let (z0, z1) = wz;
        let xs = (x, x + t);
        boxes.push(Aabb::new(vec![xs.0, 0.0, 0.0], vec![xs.1, y0, lz]));
        boxes.push(Aabb::new(vec![xs.0, y1, 0.0], vec![xs.1, ly, lz]));
        boxes.push(Aabb::new(vec![xs.0, y0, 0.0], vec![xs.1, y1, z0]));
        boxes.push(Aabb::new(vec![xs.0, y0, z1], vec![xs.1, y1, lz]));
    }
    World {
        name: "corridor3d".into(),
        dim: 3,
        bounds_lo: vec![0.0, 0.0, 0.0],
        bounds_hi: vec![lx, ly, lz],
        boxes,
        start: vec![3.0, 6.0, 4.0],
        goal_lo: vec![26.0, 4.5, 2.5],
        goal_hi: vec![29.0, 7.5, 5.5],
    }
}

/// Switchback shaft of 40.50 x 50.04 x 13.69 m scaled by `s`: outer walls
/// and two landings, each open at alternating ends.
pub fn stairwell3d(s: f64) -> World {
    let (lx, ly, lz) = (40.50 * s, 50.04 * s, 13.69 * s);
    let t = (0.5 * s).max(0.1);
    let open = 0.3 * ly;
    let mut boxes = vec![
        Aabb::new(vec![0.0, 0.0, 0.0], vec![t, ly, lz]),
        Aabb::new(vec![lx - t, 0.0, 0.0], vec![lx, ly, lz]),
        Aabb::new(vec![t, 0.0, 0.0], vec![lx - t, t, lz]),
        Aabb::new(vec![t, ly - t, 0.0], vec![lx - t, ly, lz]),
    ];
    for (k, z) in [lz / 3.0, 2.0 * lz / 3.0].into_iter().enumerate() {
        let (y0, y1) = if k % 2 == 0 { (t, ly - t - open) } else { (t + open, ly - t) };
        boxes.push(Aabb::new(vec![t, y0, z - 0.5 * t], vec![lx - t, y1, z + 0.5 * t]));
    }
    let m = 2.0 * t;
    World {
        name: "stairwell3d".into(),
        dim: 3,
        bounds_lo: vec![0.0, 0.0, 0.0],
        bounds_hi: vec![lx, ly, lz],
        boxes,
        start: vec![0.5 * lx, 0.2 * ly, lz / 6.0],
        goal_lo: vec![0.5 * lx - m, 0.5 * ly - m, 5.0 * lz / 6.0 - m.min(lz / 12.0)],
        goal_hi: vec![0.5 * lx + m, 0.5 * ly + m, 5.0 * lz / 6.0 + m.min(lz / 12.0)],
    }
}

pub const BUILTIN_WORLDS: [&str; 5] = ["open2d", "breakwater2d", "canyon2d", "corridor3d", "stairwell3d"];

/// One of the built-in worlds; `scale` only affects the stairwell.
pub fn builtin_world(name: &str, scale: f64) -> Result<World> {
    let w = match name {
        "open2d" => open2d(),
        "breakwater2d" => breakwater2d(),
        "canyon2d" => canyon2d(),
        "corridor3d" => corridor3d(),
        "stairwell3d" => stairwell3d(scale),
        _ => return Err(Error::UnknownWorld(name.into())),
    };
    w.validate()?;
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Rotating2d,
    Lidar3d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    pub kind: SensorKind,
    pub max_range: f64,
    /// Horizontal angular step in radians.
    pub resolution: f64,
    /// Number of elevation rings (3-D only).
    pub rings: usize,
    /// Half-angle of the vertical field of view in radians (3-D only).
    pub vertical_half_fov: f64,
    pub period: f64,
    pub range_noise: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            kind: SensorKind::Rotating2d,
            max_range: 10.0,
            resolution: 2.0_f64.to_radians(),
            rings: 9,
            vertical_half_fov: 45.0_f64.to_radians(),
            period: 0.5,
            range_noise: 0.0,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0 && self.resolution > 0.0 && self.period > 0.0 && self.range_noise >= 0.0) {
            return Err(Error::Config("sensor range, resolution and period must be positive".into()));
        }
        if self.kind == SensorKind::Lidar3d && self.rings == 0 {
            return Err(Error::Config("3-D sensor needs at least one ring".into()));
        }
        Ok(())
    }

    /// Beam directions in the sensor frame.
    pub fn directions(&self) -> Vec<Vec<f64>> {
        let n = (2.0 * PI / self.resolution).round().max(1.0) as usize;
        let az = (0..n).map(move |i| i as f64 * 2.0 * PI / n as f64);
        match self.kind {
            SensorKind::Rotating2d => az.map(|a| vec![a.cos(), a.sin()]).collect(),
            SensorKind::Lidar3d => {
                let els: Vec<f64> = if self.rings == 1 {
                    vec![0.0]
                } else {
                    (0..self.rings)
                        .map(|k| -self.vertical_half_fov + 2.0 * self.vertical_half_fov * k as f64 / (self.rings - 1) as f64)
                        .collect()
                };
                az.flat_map(|a| els.iter().map(move |e| vec![a.cos() * e.cos(), a.sin() * e.cos(), e.sin()]))
                    .collect()
            }
        }
    }
}

/// Simulated range scan from the true sensor pose `(x, y, [z,] psi, ...)`.
///
/// Beam directions are reported in the yaw-rotated sensor frame; the
/// returned scan pose is the true pose and must be re-expressed by the
/// caller.
pub fn raycast_scan<R: Rng + ?Sized>(world: &World, pose: &[f64], spec: &SensorSpec, rng: &mut R) -> Scan {
    let dim = world.dim;
    let yaw = pose[dim];
    let (s, c) = yaw.sin_cos();
    let noise = (spec.range_noise > 0.0).then(|| Normal::new(0.0, spec.range_noise).expect("valid sigma"));
    let beams = spec
        .directions()
        .into_iter()
        .map(|dir| {
            let mut wd = dir.clone();
            wd[0] = c * dir[0] - s * dir[1];
            wd[1] = s * dir[0] + c * dir[1];
            match world.raycast(&pose[..dim], &wd, spec.max_range) {
                Some(t) => {
                    let e = noise.map(|n| n.sample(rng)).unwrap_or(0.0);
                    let range = (t + e).clamp(1e-6, spec.max_range);
                    Beam { dir, range, hit: true }
                }
                None => Beam { dir, range: spec.max_range, hit: false },
            }
        })
        .collect();
    Scan { pose: pose.to_vec(), beams }
}

/// A resolved control: the absolute input `r` held for `steps` ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub r: Vec<f64>,
    pub steps: usize,
}

/// Resolve a planned trajectory into absolute commands, translating its
/// positions by `shift` (the planning-frame origin in the world).
pub fn commands_from(traj: &Trajectory, model: &MotionModel, shift: &[f64]) -> Result<Vec<Command>> {
    let mut prev = traj.start.mean.clone();
    let mut out = Vec::with_capacity(traj.nodes.len());
    for (c, b) in &traj.nodes {
        let mut start = prev.clone();
        for (d, s) in shift.iter().enumerate() {
            start[d] += s;
        }
        out.push(Command { r: model.resolve(c, &start), steps: model.steps(c)? });
        prev = b.mean.clone();
    }
    Ok(out)
}

/// Braking commands from a belief.
pub fn braking_commands(model: &MotionModel, b: &Belief, current: Option<&[f64]>) -> Result<Vec<Command>> {
    let cur = current.map(|r| crate::motion::Control::new(r.to_vec(), model.dt()));
    let mut out = Vec::new();
    let mut state = b.clone();
    for c in model.braking_sequence(b, cur.as_ref()) {
        out.push(Command { r: model.resolve(&c, &state.mean), steps: model.steps(&c)? });
        state = model.propagate(&state, &c)?;
    }
    Ok(out)
}

/// Step a belief through commands for at most `max_steps` ticks, calling
/// `visit(command index, belief)` after each tick.
pub fn roll_commands<'a>(
    model: &MotionModel,
    b: &Belief,
    commands: impl IntoIterator<Item = &'a Command>,
    max_steps: usize,
    mut visit: impl FnMut(usize, &Belief),
) -> Belief {
    let mut cur = b.clone();
    let mut left = max_steps;
    for (i, c) in commands.into_iter().enumerate() {
        for _ in 0..c.steps {
            if left == 0 {
                return cur;
            }
            cur = model.step(&cur, &c.r);
            left -= 1;
            visit(i, &cur);
        }
    }
    cur
}

/// How the true state departs from the nominal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSpec {
    /// Multiplier on the model's process-noise covariance.
    pub noise_scale: f64,
    /// Constant workspace velocity added to the true position, m/s.
    pub bias: Vec<f64>,
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec { noise_scale: 1.0, bias: Vec::new() }
    }
}

impl DriftSpec {
    pub fn none() -> Self {
        DriftSpec { noise_scale: 0.0, bias: Vec::new() }
    }
}

/// One line of the execution log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRecord {
    pub t: f64,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
    pub event: String,
}

/// Open-loop executor holding the true state and the propagated belief.
pub struct Executor {
    model: MotionModel,
    belief: Belief,
    truth: DVector<f64>,
    time: f64,
    queue: VecDeque<Command>,
    /// Input of the most recent tick.
    last_r: Option<Vec<f64>>,
    drift: DriftSpec,
    r_body: f64,
    in_collision: bool,
    pub collisions: usize,
    pub collision_ticks: usize,
    pub distance: f64,
    pub log: Vec<ExecRecord>,
    rng: ChaCha8Rng,
}

impl Executor {
    pub fn new(model: MotionModel, start: Belief, drift: DriftSpec, r_body: f64, rng: ChaCha8Rng) -> Self {
        let truth = start.mean.clone();
        Executor {
            model,
            belief: start,
            truth,
            time: 0.0,
            queue: VecDeque::new(),
            last_r: None,
            drift,
            r_body,
            in_collision: false,
            collisions: 0,
            collision_ticks: 0,
            distance: 0.0,
            log: Vec::new(),
            rng,
        }
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    pub fn truth(&self) -> &DVector<f64> {
        &self.truth
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn queue(&self) -> &VecDeque<Command> {
        &self.queue
    }

    pub fn last_input(&self) -> Option<&[f64]> {
        self.last_r.as_deref()
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    /// Replace every pending command.
    pub fn dispatch(&mut self, commands: Vec<Command>) {
        self.queue = commands.into_iter().filter(|c| c.steps > 0).collect();
    }

    /// Keep only the first `steps` ticks of the queue.
    pub fn truncate(&mut self, mut steps: usize) {
        let mut kept = VecDeque::new();
        while let Some(mut c) = self.queue.pop_front() {
            if steps == 0 {
                break;
            }
            c.steps = c.steps.min(steps);
            steps -= c.steps;
            kept.push_back(c);
        }
        self.queue = kept;
    }

    /// Append commands after the pending ones.
    pub fn extend(&mut self, commands: Vec<Command>) {
        self.queue.extend(commands.into_iter().filter(|c| c.steps > 0));
    }

    /// Pending ticks in the queue.
    pub fn pending_steps(&self) -> usize {
        self.queue.iter().map(|c| c.steps).sum()
    }

    fn sample_noise(&mut self, r: &[f64]) -> DVector<f64> {
        let n = self.truth.len();
        if self.drift.noise_scale <= 0.0 {
            return DVector::zeros(n);
        }
        let q: DMatrix<f64> = self.model.noise_cov(r) * self.drift.noise_scale;
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut self.rng));
        let jitter = DMatrix::identity(n, n) * 1e-18;
        match nalgebra::Cholesky::new(&q + jitter) {
            Some(ch) => ch.l() * z,
            None => DVector::zeros(n),
        }
    }

    /// Advance one tick. Idle executors hold still. Returns whether the true
    /// state is in collision after the tick.
    pub fn tick(&mut self, world: &World) -> bool {
        let dt = self.model.dt();
        if let Some(front) = self.queue.front_mut() {
            let r = front.r.clone();
            front.steps -= 1;
            if front.steps == 0 {
                self.queue.pop_front();
            }
            let w = self.model.kind().workspace_dim();
            let before: Vec<f64> = self.truth.as_slice()[..w].to_vec();
            let noise = self.sample_noise(&r);
            let mut next = self.model.step_mean(&self.truth, &r) + noise;
            for (d, v) in self.drift.bias.iter().enumerate().take(w) {
                next[d] += v * dt;
            }
            self.truth = next;
            self.belief = self.model.step(&self.belief, &r);
            self.distance += crate::planner::dist(&before, &self.truth.as_slice()[..w]);
            self.last_r = Some(r);
        } else {
            self.last_r = None;
        }
        self.time += dt;
        self.belief.stamp = self.time;
        let w = self.model.kind().workspace_dim();
        let hit = world.collides(&self.truth.as_slice()[..w], self.r_body);
        if hit {
            self.collision_ticks += 1;
            if !self.in_collision {
                self.collisions += 1;
                self.record("collision");
            }
        }
        self.in_collision = hit;
        hit
    }

    /// Append a log line for the current tick.
    pub fn record(&mut self, event: &str) {
        self.log.push(ExecRecord {
            t: self.time,
            truth: self.truth.iter().copied().collect(),
            mean: self.belief.mean.iter().copied().collect(),
            cov_diag: self.belief.cov.diagonal().iter().copied().collect(),
            event: event.into(),
        });
    }

    /// Write the execution log as CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_exec_csv(&self.log, path)
    }
}

pub fn write_exec_csv(log: &[ExecRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = log.first().map(|r| r.truth.len()).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("true_{i}")));
    header.extend((0..n).map(|i| format!("mean_{i}")));
    header.extend((0..n).map(|i| format!("var_{i}")));
    header.push("event".into());
    writeln!(f, "{}", header.join(","))?;
    for r in log {
        let mut row = vec![format!("{:.3}", r.t)];
        row.extend(r.truth.iter().chain(&r.mean).chain(&r.cov_diag).map(|v| format!("{v:.9}")));
        row.push(r.event.clone());
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

/// Execute a trajectory expressed in world coordinates from its start
/// belief, logging every `log_period` seconds.
pub fn execute(
    traj: &Trajectory,
    world: &World,
    model: &MotionModel,
    r_body: f64,
    drift: DriftSpec,
    log_period: f64,
    rng: ChaCha8Rng,
) -> Result<Executor> {
    let zero = vec![0.0; model.kind().workspace_dim()];
    let commands = commands_from(traj, model, &zero)?;
    let mut ex = Executor::new(model.clone(), traj.start.clone(), drift, r_body, rng);
    ex.dispatch(commands);
    ex.record("start");
    let every = ((log_period / model.dt()).round() as usize).max(1);
    let mut k = 0;
    while !ex.is_idle() {
        ex.tick(world);
        k += 1;
        if k % every == 0 {
            ex.record("");
        }
    }
    ex.record("end");
    Ok(ex)
}
