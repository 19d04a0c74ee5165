//! The mission loop: predict the planning frame, rebuild the cumulative
//! map, check the ongoing plan, solve, and dispatch.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::collision::Checker;
use crate::config::MissionConfig;
use crate::error::{Error, Result};
use crate::geometry::{PoseBelief, PoseGroup};
use crate::mapping::{build_cumulative, CumulativeMap, SubmapStore};
use crate::motion::{Belief, Control, ModelKind, MotionModel};
use crate::planner::{dist, inevitable_collision, plan, GoalRegion, PlanStatus, PlanningProblem, TraceNode};
use crate::sim::{
    braking_commands, commands_from, raycast_scan, roll_commands, Command, Executor, World,
};

/// Frame collision mass (in units of the safety budget) below which recovery planning is tried.
const ESCAPE_FACTOR: f64 = 4.0;

/// One line of the mission event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub kind: String,
    pub payload: serde_json::Value,
}

/// Which plan was dispatched at the end of an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispatch {
    New,
    Ongoing,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub index: usize,
    pub t: f64,
    pub status: PlanStatus,
    pub lead_found: bool,
    pub ongoing_valid: bool,
    pub ongoing_length: Option<f64>,
    pub new_length: Option<f64>,
    pub dispatch: Dispatch,
    pub failures: usize,
    /// Budgeted planning time in seconds (virtual under a frozen clock).
    pub planning_time: f64,
    pub known_cells: usize,
    /// Nodes added to the constrained tree this iteration.
    pub tree_nodes: usize,
    /// Positional distance between the predicted frame and the executor's
    /// believed pose at dispatch; absent when the mission ended first.
    pub frame_error: Option<f64>,
    /// Heading difference at dispatch, radians (fixed-wing only).
    pub frame_heading_error: Option<f64>,
    /// Distance between the true pose and the predicted frame at dispatch.
    #[serde(skip)]
    pub frame_truth_error: Option<f64>,
    #[serde(skip)]
    pub solve_wall: f64,
    /// Wall time of the lead and constrained layers inside `solve_wall`.
    #[serde(skip)]
    pub layer_walls: (f64, f64),
    #[serde(skip)]
    pub map_wall: f64,
    #[serde(skip)]
    pub other_wall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionStatus {
    GoalReached,
    Returned,
    EmergencyStop,
    Timeout,
}

/// Summary of one mission.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mission_id: String,
    pub seed: u64,
    pub success: bool,
    pub status: MissionStatus,
    pub goal_time: Option<f64>,
    pub path_length: f64,
    pub iterations: usize,
    pub planning_times: Vec<f64>,
    pub collision_count: usize,
    pub contingency: bool,
    pub event_log: Option<String>,
    pub artifacts: Vec<String>,
}

/// `true` iff `new` reaches the goal and is no longer than the ongoing
/// plan, where a missing or non-goal-reaching ongoing plan counts as
/// infinitely long.
pub fn satisfies_criteria(new: Option<(f64, bool)>, ongoing: Option<(f64, bool)>) -> bool {
    let Some((len, reaches)) = new else {
        return false;
    };
    if !reaches {
        return false;
    }
    let cur = match ongoing {
        Some((l, true)) => l,
        _ => f64::INFINITY,
    };
    len <= cur
}

/// Belief after executing `queue` from `robot` for `horizon_steps` ticks;
/// the robot holds still once the queue runs out.
pub fn predict_frame<'a>(
    model: &MotionModel,
    robot: &Belief,
    queue: impl IntoIterator<Item = &'a Command>,
    horizon_steps: usize,
) -> Belief {
    roll_commands(model, robot, queue, horizon_steps, |_, _| {})
}

fn workspace(kind: ModelKind) -> usize {
    kind.workspace_dim()
}

/// Robot pose as a pose belief: the unicycle has no heading so its frame is
/// axis-aligned.
pub fn robot_pose(b: &Belief) -> PoseBelief {
    match b.kind {
        ModelKind::Unicycle => {
            let mut cov = DMatrix::zeros(3, 3);
            cov.view_mut((0, 0), (2, 2)).copy_from(&b.position_cov());
            PoseBelief::new(PoseGroup::Se2, DVector::from_vec(vec![b.mean[0], b.mean[1], 0.0]), cov)
                .expect("valid pose")
        }
        ModelKind::FixedWing => PoseBelief::new(PoseGroup::Se3, b.mean.clone(), b.cov.clone()).expect("valid pose"),
    }
}

/// Sensor pose used for ray casting from a true state.
fn sensor_pose(kind: ModelKind, truth: &DVector<f64>) -> Vec<f64> {
    match kind {
        ModelKind::Unicycle => vec![truth[0], truth[1], 0.0],
        ModelKind::FixedWing => truth.iter().copied().collect(),
    }
}

fn shift_belief(b: &Belief, offset: &[f64]) -> Belief {
    let mut out = b.clone();
    for (d, o) in offset.iter().enumerate() {
        out.mean[d] -= o;
    }
    out
}

fn shift_command(c: &Command, kind: ModelKind, offset: &[f64]) -> Command {
    let mut r = c.r.clone();
    if kind == ModelKind::Unicycle {
        for (d, o) in offset.iter().enumerate() {
            r[d] -= o;
        }
    }
    Command { r, steps: c.steps }
}

/// Outcome of checking queued commands against a map: how many ticks can be
/// kept so that every visited belief is safe and the last one can still
/// brake safely.
struct PrefixCheck {
    valid: bool,
    keep: usize,
    end: Belief,
    last_r: Option<Vec<f64>>,
}

fn check_commands(
    model: &MotionModel,
    start: &Belief,
    commands: &[Command],
    map: &CumulativeMap,
    checker: &Checker,
    start_input: Option<&[f64]>,
) -> PrefixCheck {
    let stride = 0.5 * map.resolution();
    let mut states: Vec<(Belief, Vec<f64>)> = Vec::new();
    let mut last = start.position().to_vec();
    let mut first_bad = None;
    let mut cur = start.clone();
    'outer: for c in commands {
        for k in 0..c.steps {
            cur = model.step(&cur, &c.r);
            states.push((cur.clone(), c.r.clone()));
            let boundary = k + 1 == c.steps;
            if boundary || dist(cur.position(), &last) >= stride {
                last = cur.position().to_vec();
                if !checker.is_safe(&cur, map) {
                    first_bad = Some(states.len() - 1);
                    break 'outer;
                }
            }
        }
    }
    let Some(bad) = first_bad else {
        let end = states.last().map(|s| s.0.clone()).unwrap_or_else(|| start.clone());
        let last_r = states.last().map(|s| s.1.clone()).or_else(|| start_input.map(|r| r.to_vec()));
        return PrefixCheck { valid: true, keep: states.len(), end, last_r };
    };
    // walk back to a state from which braking is safe
    let mut j = bad;
    while j > 0 {
        let (b, r) = &states[j - 1];
        let c = Control::new(r.clone(), model.dt());
        if !inevitable_collision(b, Some(&c), map, checker, model) {
            return PrefixCheck { valid: false, keep: j, end: b.clone(), last_r: Some(r.clone()) };
        }
        j = j.saturating_sub(2);
    }
    PrefixCheck { valid: false, keep: 0, end: start.clone(), last_r: start_input.map(|r| r.to_vec()) }
}

/// Planner seed for one iteration of a mission.
fn iteration_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64).rotate_left(17)
}

/// A running mission.
pub struct Mission {
    pub cfg: MissionConfig,
    pub world: World,
    model: MotionModel,
    checker: Checker,
    store: SubmapStore,
    pub exec: Executor,
    goal: GoalRegion,
    start: Vec<f64>,
    returning: bool,
    estop: bool,
    failures: usize,
    /// Whether the queued plan ends inside the goal, and the tick count
    /// (from now) at which its braking tail starts.
    ongoing_goal: bool,
    ongoing_main: usize,
    sensor_rng: ChaCha8Rng,
    scan_every: usize,
    ticks: usize,
    pub events: Vec<Event>,
    pub iterations: Vec<IterationRecord>,
    pub last_map: Option<CumulativeMap>,
    /// Constrained tree of the latest query, in world coordinates.
    pub last_tree: Vec<TraceNode>,
    status: Option<MissionStatus>,
    goal_time: Option<f64>,
}

impl Mission {
    pub fn new(cfg: MissionConfig) -> Result<Self> {
        cfg.validate()?;
        let world = cfg.world()?;
        Self::with_world(cfg, world)
    }

    pub fn with_world(cfg: MissionConfig, world: World) -> Result<Self> {
        cfg.validate()?;
        world.validate()?;
        let model = MotionModel::new(cfg.model.clone())?;
        if world.dim != workspace(model.kind()) {
            return Err(Error::Config("world and model dimensions differ".into()));
        }
        if cfg.mission.home.as_ref().is_some_and(|h| h.len() != world.dim) {
            return Err(Error::Config("mission.home must have the world's dimension".into()));
        }
        let checker = Checker::new(cfg.safety, cfg.mission.r_body)?;
        let group = PoseGroup::for_workspace(world.dim)?;
        let store = SubmapStore::new(cfg.sensor_model(), cfg.map.resolution, group, cfg.map.submap_period)?;
        let mut mean = vec![0.0; model.kind().state_dim()];
        mean[..world.dim].copy_from_slice(&world.start);
        let start = Belief::exact(model.kind(), &mean)?;
        let mut exec_rng = ChaCha8Rng::seed_from_u64(cfg.mission.seed);
        exec_rng.set_stream(4);
        let mut sensor_rng = ChaCha8Rng::seed_from_u64(cfg.mission.seed);
        sensor_rng.set_stream(3);
        let exec = Executor::new(model.clone(), start, cfg.drift.clone(), cfg.mission.r_body, exec_rng);
        let scan_every = ((cfg.sensor.period / model.dt()).round() as usize).max(1);
        Ok(Mission {
            goal: world.goal(),
            start: cfg.mission.home.clone().unwrap_or_else(|| world.start.clone()),
            world,
            model,
            checker,
            store,
            exec,
            returning: false,
            estop: false,
            failures: 0,
            ongoing_goal: false,
            ongoing_main: 0,
            sensor_rng,
            scan_every,
            ticks: 0,
            events: Vec::new(),
            iterations: Vec::new(),
            last_map: None,
            last_tree: Vec::new(),
            status: None,
            goal_time: None,
            cfg,
        })
    }

    pub fn model(&self) -> &MotionModel {
        &self.model
    }

    pub fn store(&self) -> &SubmapStore {
        &self.store
    }

    pub fn goal(&self) -> &GoalRegion {
        &self.goal
    }

    pub fn is_returning(&self) -> bool {
        self.returning
    }

    pub fn failures(&self) -> usize {
        self.failures
    }

    pub fn status(&self) -> Option<MissionStatus> {
        self.status
    }

    fn event(&mut self, kind: &str, payload: serde_json::Value) {
        self.events.push(Event { t: round_time(self.exec.time()), kind: kind.into(), payload });
    }

    fn scan(&mut self) -> Result<()> {
        let now = self.exec.time();
        let pose = robot_pose(self.exec.belief());
        self.store.set_robot_pose(pose.clone());
        let sp = sensor_pose(self.model.kind(), self.exec.truth());
        let mut scan = raycast_scan(&self.world, &sp, &self.cfg.sensor, &mut self.sensor_rng);
        if self.store.is_empty() {
            self.store.start_submap(pose.clone(), now)?;
            self.event("submap", json!({"id": 0}));
        }
        let before = self.store.len();
        // on rollover the store re-expresses this pose in the new submap frame
        scan.pose = self.store.to_active_frame(pose.mean().as_slice());
        let id = self.store.integrate_scan(&scan, now)?;
        if self.store.len() != before {
            self.event("submap", json!({"id": id}));
        }
        Ok(())
    }

    fn in_box(p: &[f64], g: &GoalRegion) -> bool {
        g.contains(p)
    }

    fn truth_position(&self) -> Vec<f64> {
        self.exec.truth().as_slice()[..self.world.dim].to_vec()
    }

    /// Check for the end of the mission; returns true when finished.
    fn check_done(&mut self) -> bool {
        if self.status.is_some() {
            return true;
        }
        let p = self.truth_position();
        let final_goal = self.world.goal();
        if !self.returning && Self::in_box(&p, &final_goal) {
            self.status = Some(MissionStatus::GoalReached);
            self.goal_time = Some(round_time(self.exec.time()));
            self.event("goal_reached", json!({}));
            return true;
        }
        if self.returning && Self::in_box(&p, &self.goal) {
            self.status = Some(MissionStatus::Returned);
            self.event("returned", json!({}));
            return true;
        }
        if self.estop && self.exec.is_idle() {
            self.status = Some(MissionStatus::EmergencyStop);
            return true;
        }
        if self.exec.time() >= self.cfg.mission.max_time - 1e-9 {
            self.status = Some(MissionStatus::Timeout);
            self.event("timeout", json!({}));
            return true;
        }
        false
    }

    /// Advance the simulation by `steps` ticks, scanning at the sensor
    /// period. Stops early when the mission ends.
    fn advance(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.exec.tick(&self.world);
            self.ticks += 1;
            self.ongoing_main = self.ongoing_main.saturating_sub(1);
            if self.ticks % self.scan_every == 0 {
                self.scan()?;
                self.exec.record("");
            }
            if self.check_done() {
                break;
            }
        }
        Ok(())
    }

    /// Checker for motions starting at `b`. When `b` itself is marginally unsafe the threshold is
    /// relaxed to its own collision mass so the robot can move away; the mass is returned then.
    fn checker_from(&self, b: &Belief, map: &CumulativeMap) -> (Checker, Option<f64>) {
        let mut checker = self.checker;
        if checker.is_safe(b, map) {
            return (checker, None);
        }
        let mass = checker.p_collision(b, map).unwrap_or(1.0);
        let budget = checker.safety.budget();
        if mass >= ESCAPE_FACTOR * budget {
            return (checker, None);
        }
        checker.safety.p_safe = checker.safety.alpha - (1.5 * mass).max(mass + 0.1 * budget);
        (checker, Some(mass))
    }

    fn horizon_steps(&self) -> usize {
        (self.cfg.delta_t_mp() / self.model.dt()).round() as usize
    }

    /// Current input at a tick index of the queue (or the last input).
    fn input_at(&self, tick: usize) -> Option<Vec<f64>> {
        let mut left = tick;
        for c in self.exec.queue() {
            if left < c.steps {
                return Some(c.r.clone());
            }
            left -= c.steps;
        }
        self.exec.queue().back().map(|c| c.r.clone()).or_else(|| self.exec.last_input().map(|r| r.to_vec()))
    }

    fn queue_split(&self, at: usize) -> (Vec<Command>, Vec<Command>) {
        let mut head = Vec::new();
        let mut tail = Vec::new();
        let mut left = at;
        for c in self.exec.queue() {
            if left >= c.steps {
                head.push(c.clone());
                left -= c.steps;
            } else if left > 0 {
                head.push(Command { r: c.r.clone(), steps: left });
                tail.push(Command { r: c.r.clone(), steps: c.steps - left });
                left = 0;
            } else {
                tail.push(c.clone());
            }
        }
        (head, tail)
    }

    /// Translation-only planning frame at a predicted belief.
    fn frame_of(pred: &Belief) -> Result<PoseBelief> {
        PoseBelief::translation(pred.position(), &pred.position_cov())
    }

    /// Root belief in the planning frame: zero position with no positional
    /// uncertainty.
    fn root_of(pred: &Belief) -> Belief {
        let w = workspace(pred.kind);
        let mut root = pred.clone();
        for d in 0..w {
            root.mean[d] = 0.0;
        }
        let n = root.cov.nrows();
        for d in 0..w {
            for k in 0..n {
                root.cov[(d, k)] = 0.0;
                root.cov[(k, d)] = 0.0;
            }
        }
        root
    }

    fn build_map(&self, frame: &PoseBelief) -> Result<CumulativeMap> {
        build_cumulative(frame, &self.store, &self.cfg.map.fusion)
    }

    /// Input expressed in the planning frame back in world coordinates.
    fn unshift_input(&self, r: &[f64], offset: &[f64]) -> Vec<f64> {
        let back: Vec<f64> = offset.iter().map(|v| -v).collect();
        shift_command(&Command { r: r.to_vec(), steps: 1 }, self.model.kind(), &back).r
    }

    /// Replace the queue after `keep` ticks by braking from `end`.
    fn cut_queue(&mut self, keep: usize, end: &Belief, last_r: Option<&[f64]>) -> Result<()> {
        self.exec.truncate(keep);
        let brake = braking_commands(&self.model, end, last_r)?;
        self.exec.extend(brake);
        Ok(())
    }

    /// One pass of the mission loop.
    pub fn iterate(&mut self) -> Result<()> {
        let index = self.iterations.len();
        let t_other = Instant::now();
        self.event("iteration_start", json!({"index": index}));
        let n = self.horizon_steps();
        let w = self.world.dim;

        // predict the planning frame and build the map around it
        let mut pred = predict_frame(&self.model, self.exec.belief(), self.exec.queue(), n);
        let mut frame = Self::frame_of(&pred)?;
        let t_map = Instant::now();
        let mut map = self.build_map(&frame)?;
        let mut map_wall = t_map.elapsed().as_secs_f64();
        let mut offset: Vec<f64> = pred.position().to_vec();

        // the part executed before dispatch is checked from the current belief
        let (head, _) = self.queue_split(n);
        // positions are certain relative to the frame; its uncertainty lives in the map
        let here = Self::root_of(self.exec.belief());
        let here = shift_belief(&here, &offset.iter().zip(self.exec.belief().position()).map(|(o, p)| o - p).collect::<Vec<_>>());
        let head_checker = self.checker_from(&here, &map).0;
        let head_local: Vec<Command> = head.iter().map(|c| shift_command(c, self.model.kind(), &offset)).collect();
        let last_local = self.exec.last_input().map(|r| shift_command(&Command { r: r.to_vec(), steps: 1 }, self.model.kind(), &offset).r);
        let head_check = check_commands(&self.model, &here, &head_local, &map, &head_checker, last_local.as_deref());
        let mut ongoing_valid = true;
        if !head_check.valid {
            ongoing_valid = false;
            let end = shift_belief(&head_check.end, &offset.iter().map(|v| -v).collect::<Vec<_>>());
            let last_r = head_check.last_r.as_ref().map(|r| self.unshift_input(r, &offset));
            self.cut_queue(head_check.keep, &end, last_r.as_deref())?;
            self.ongoing_goal = false;
            self.ongoing_main = 0;
            self.event("invalidation", json!({"phase": "head", "kept_ticks": head_check.keep}));
            pred = predict_frame(&self.model, self.exec.belief(), self.exec.queue(), n);
            frame = Self::frame_of(&pred)?;
            let t = Instant::now();
            map = self.build_map(&frame)?;
            map_wall += t.elapsed().as_secs_f64();
            offset = pred.position().to_vec();
        }
        let root = Self::root_of(&pred);
        let dispatch_input = self.input_at(n.saturating_sub(1));
        let dispatch_local = dispatch_input.as_ref().map(|r| shift_command(&Command { r: r.clone(), steps: 1 }, self.model.kind(), &offset).r);

        // the rest of the ongoing plan is checked from the new root
        let (_, tail) = self.queue_split(n);
        let tail_local: Vec<Command> = tail.iter().map(|c| shift_command(c, self.model.kind(), &offset)).collect();
        let tail_checker = self.checker_from(&root, &map).0;
        let tail_check = check_commands(&self.model, &root, &tail_local, &map, &tail_checker, dispatch_local.as_deref());
        let tail_start_main = self.ongoing_main.saturating_sub(n);
        let mut ongoing_length = None;
        if !tail.is_empty() {
            if tail_check.valid {
                let mut len = 0.0;
                let mut last = root.position().to_vec();
                roll_commands(&self.model, &root, &tail_local, tail_start_main, |_, b| {
                    len += dist(&last, b.position());
                    last = b.position().to_vec();
                });
                ongoing_length = Some(len);
            } else {
                ongoing_valid = false;
                let end = shift_belief(&tail_check.end, &offset.iter().map(|v| -v).collect::<Vec<_>>());
                let last_r = tail_check.last_r.as_ref().map(|r| self.unshift_input(r, &offset));
                self.cut_queue(n + tail_check.keep, &end, last_r.as_deref())?;
                self.ongoing_goal = false;
                self.ongoing_main = 0;
                self.event("invalidation", json!({"phase": "tail", "kept_ticks": tail_check.keep}));
            }
        }
        let ongoing = if tail.is_empty() || !ongoing_valid {
            None
        } else {
            ongoing_length.map(|l| (l, self.ongoing_goal))
        };

        // solve
        let goal_local = self.goal.shifted(&offset);
        let (mut lo, mut hi) = map.extent();
        for d in 0..w {
            for v in [0.0, goal_local.lo[d], goal_local.hi[d]] {
                lo[d] = lo[d].min(v);
                hi[d] = hi[d].max(v);
            }
            lo[d] -= self.cfg.mission.bounds_margin;
            hi[d] += self.cfg.mission.bounds_margin;
        }
        let (mut checker, escape) = self.checker_from(&root, &map);
        match escape {
            Some(mass) => self.event("escape", json!({"mass": round_len(mass)})),
            None => {
                let budget = checker.safety.budget();
                let mass = checker.p_collision(&root, &map).unwrap_or(0.0);
                let planning = (budget * (1.0 - self.cfg.mission.plan_margin)).max(1.5 * mass).min(budget);
                checker.safety.p_safe = checker.safety.alpha - planning;
            }
        }
        let problem = PlanningProblem {
            start: root.clone(),
            start_control: dispatch_local.map(|r| Control::new(r, self.model.dt())),
            goal: goal_local,
            map: &map,
            checker,
            model: &self.model,
            bounds_lo: lo,
            bounds_hi: hi,
        };
        let other_wall = t_other.elapsed().as_secs_f64() - map_wall;
        let t_solve = Instant::now();
        let outcome = plan(&problem, &self.cfg.planner, iteration_seed(self.cfg.mission.seed, index))?;
        let solve_wall = t_solve.elapsed().as_secs_f64();
        let planning_time = outcome.sst.as_ref().map(|s| s.iterations as f64 / self.cfg.planner.budget.sst_rate).unwrap_or(0.0)
            + if outcome.lead.is_some() || self.cfg.planner.mode == crate::planner::PlannerMode::MultiLayer {
                self.cfg.planner.budget_lead
            } else {
                0.0
            };
        self.last_tree = outcome.sst.as_ref().map_or_else(Vec::new, |s| {
            s.tree
                .iter()
                .map(|n| TraceNode { position: n.position.iter().zip(&offset).map(|(p, o)| p + o).collect(), ..n.clone() })
                .collect()
        });
        let new = outcome.trajectory.as_ref().map(|t| (t.total_length, t.reaches_goal));
        let accept = satisfies_criteria(new, ongoing);
        let mut new_commands = None;
        if accept {
            let traj = outcome.trajectory.as_ref().expect("accepted plan exists");
            let mut cmds = commands_from(traj, &self.model, &offset)?;
            let main: usize = cmds.iter().map(|c| c.steps).sum();
            let end = shift_belief(traj.terminal(), &offset.iter().map(|v| -v).collect::<Vec<_>>());
            let last_r = cmds.last().map(|c| c.r.clone()).or(dispatch_input.clone());
            cmds.extend(braking_commands(&self.model, &end, last_r.as_deref())?);
            new_commands = Some((cmds, main));
        }

        let solved = outcome.status == PlanStatus::Solved;
        let ongoing_ok = ongoing.is_some_and(|(_, g)| g);
        if solved || ongoing_ok {
            self.failures = 0;
        } else {
            self.failures += 1;
        }

        // let the executor reach the dispatch time, then hand over
        let t0 = self.exec.time();
        self.advance(n)?;
        let arrived = self.exec.time() - t0 >= n as f64 * self.model.dt() - 1e-9;
        let b = self.exec.belief();
        let frame_error = arrived.then(|| dist(b.position(), pred.position()));
        let frame_heading_error = arrived.then(|| match b.kind {
            ModelKind::FixedWing => (crate::geometry::normalize_angle(b.mean[3] - pred.mean[3]))
                .abs()
                .max((b.mean[4] - pred.mean[4]).abs()),
            ModelKind::Unicycle => 0.0,
        });
        let frame_truth_error = arrived.then(|| dist(&self.truth_position(), pred.position()));
        let dispatch = match (&new_commands, arrived && self.status.is_none()) {
            (Some(_), true) => {
                let (cmds, main) = new_commands.expect("checked");
                let len = new.map(|v| v.0).unwrap_or(0.0);
                self.exec.dispatch(cmds);
                self.ongoing_goal = true;
                self.ongoing_main = main;
                self.event("dispatch", json!({"length": round_len(len), "ticks": main}));
                Dispatch::New
            }
            _ if !self.exec.is_idle() => Dispatch::Ongoing,
            _ => Dispatch::None,
        };

        self.iterations.push(IterationRecord {
            index,
            t: round_time(t0),
            status: outcome.status,
            lead_found: outcome.lead.is_some(),
            ongoing_valid,
            ongoing_length: ongoing.map(|o| round_len(o.0)),
            new_length: new.map(|v| round_len(v.0)),
            dispatch,
            failures: self.failures,
            planning_time,
            known_cells: map.known_count(),
            tree_nodes: self.last_tree.len(),
            frame_error,
            frame_heading_error,
            frame_truth_error,
            solve_wall,
            layer_walls: (outcome.lead_wall, outcome.sst_wall),
            map_wall,
            other_wall,
        });
        self.last_map = Some(map);
        self.event("iteration_end", json!({"index": index, "dispatch": dispatch, "failures": self.failures}));

        if self.failures >= self.cfg.mission.n_cp && self.status.is_none() {
            self.contingency()?;
        }
        Ok(())
    }

    /// Switch to returning to the start, or stop if already returning.
    pub fn contingency(&mut self) -> Result<()> {
        self.failures = 0;
        if !self.returning {
            self.returning = true;
            let r = 1.0_f64.max(2.0 * self.cfg.map.resolution);
            self.goal = GoalRegion::around(&self.start, r)?;
            self.ongoing_goal = false;
            self.event("contingency", json!({"goal": self.start}));
        } else if !self.estop {
            self.estop = true;
            let b = self.exec.belief().clone();
            let r = self.exec.last_input().map(|r| r.to_vec());
            self.cut_queue(0, &b, r.as_deref())?;
            self.event("emergency_stop", json!({}));
        }
        Ok(())
    }

    /// Run until the goal is reached, the vehicle returns, stops, or the
    /// time limit passes.
    /// Run one planning cycle (or one horizon of braking after an
    /// emergency stop). Returns `true` once the mission has ended.
    pub fn step(&mut self) -> Result<bool> {
        if self.store.is_empty() {
            self.scan()?;
            self.exec.record("start");
        }
        if self.check_done() {
            return Ok(true);
        }
        if self.estop {
            self.advance(self.horizon_steps())?;
        } else {
            self.iterate()?;
        }
        Ok(self.check_done())
    }

    pub fn run(&mut self) -> Result<RunReport> {
        while !self.step()? {}
        self.exec.record("end");
        Ok(self.report())
    }

    pub fn report(&self) -> RunReport {
        let status = self.status.unwrap_or(MissionStatus::Timeout);
        let success = status == MissionStatus::GoalReached && self.exec.collisions == 0;
        RunReport {
            mission_id: format!("{}-{}", self.world.name, self.cfg.mission.seed),
            seed: self.cfg.mission.seed,
            success,
            status,
            goal_time: self.goal_time,
            path_length: round_len(self.exec.distance),
            iterations: self.iterations.len(),
            planning_times: self.iterations.iter().map(|i| i.planning_time).collect(),
            collision_count: self.exec.collisions,
            contingency: self.returning,
            event_log: None,
            artifacts: Vec::new(),
        }
    }

    pub fn write_events(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.events {
            writeln!(f, "{}", serde_json::to_string(e).map_err(|e| Error::Invariant(e.to_string()))?)?;
        }
        Ok(())
    }
}

fn round_time(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

fn round_len(l: f64) -> f64 {
    (l * 1e6).round() / 1e6
}
