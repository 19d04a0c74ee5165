use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use safenav::bench::world_map;
use safenav::collision::{Checker, SafetyConfig};
use safenav::motion::{Belief, Control, ModelKind, ModelParams, MotionModel};
use safenav::planner::{plan, GoalRegion, PlannerConfig, PlanningProblem, Trajectory};
use safenav::sim::{execute, open2d, Aabb, Command, DriftSpec, Executor, World};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// open2d with a wall at x in [5, 6] pierced by a gap of width `gap`.
fn gap_world(gap: f64) -> World {
    let mut w = open2d();
    let g = 0.5 * gap;
    w.boxes.push(Aabb::new(vec![5.0, -10.0], vec![6.0, -g]));
    w.boxes.push(Aabb::new(vec![5.0, g], vec![6.0, 10.0]));
    w
}

fn planned(world: &World, seed: u64) -> (Trajectory, MotionModel, f64) {
    let model = MotionModel::new(ModelParams::default()).unwrap();
    let map = world_map(world, 0.25).unwrap();
    let r_body = 0.3;
    let problem = PlanningProblem {
        start: Belief::exact(ModelKind::Unicycle, &[0.0, 0.0, 0.0, 0.0]).unwrap(),
        start_control: None,
        goal: GoalRegion::new(world.goal_lo.clone(), world.goal_hi.clone()).unwrap(),
        map: &map,
        checker: Checker::new(SafetyConfig::default(), r_body).unwrap(),
        model: &model,
        bounds_lo: world.bounds_lo.clone(),
        bounds_hi: world.bounds_hi.clone(),
    };
    let out = plan(&problem, &PlannerConfig::default(), seed).unwrap();
    (out.trajectory.expect("gap world is solvable"), model, r_body)
}

#[test]
fn noiseless_execution_tracks_the_belief() {
    let world = open2d();
    let (traj, model, r) = planned(&world, 1);
    let ex = execute(&traj, &world, &model, r, DriftSpec::none(), 0.05, rng(0)).unwrap();
    assert!(ex.log.len() > 10);
    for rec in &ex.log {
        assert_eq!(rec.truth, rec.mean);
    }
    let end = ex.belief().position();
    let want = traj.terminal().position();
    assert!(end.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-9));
}

#[test]
fn noisy_execution_grows_the_covariance() {
    let model = MotionModel::new(ModelParams::fixed_wing()).unwrap();
    let start = Belief::exact(ModelKind::FixedWing, &[0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
    let c = Control::new(vec![1.0, 0.2, 0.05], 1.0);
    let r = model.resolve(&c, &start.mean);
    let mut ex = Executor::new(model.clone(), start, DriftSpec::default(), 0.3, rng(2));
    ex.dispatch(vec![Command { r, steps: 200 }]);
    let mut prev = 0.0;
    while !ex.is_idle() {
        ex.tick(&void3d());
        let tr: f64 = ex.belief().cov.trace();
        assert!(tr > prev, "{tr} <= {prev}");
        prev = tr;
    }
}

fn void3d() -> World {
    World {
        name: "void".into(),
        dim: 3,
        bounds_lo: vec![-50.0; 3],
        bounds_hi: vec![50.0; 3],
        boxes: Vec::new(),
        start: vec![0.0; 3],
        goal_lo: vec![1.0; 3],
        goal_hi: vec![2.0; 3],
    }
}

#[test]
fn sampled_unsafe_rate_respects_the_safety_bound() {
    let world = gap_world(2.0);
    let (traj, model, r) = planned(&world, 3);
    let n = 100;
    let mut unsafe_runs = 0;
    for seed in 0..n {
        let ex = execute(&traj, &world, &model, r, DriftSpec::default(), 0.5, rng(1000 + seed)).unwrap();
        unsafe_runs += (ex.collisions > 0) as usize;
    }
    let p = 1.0 - SafetyConfig::default().p_safe;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    let rate = unsafe_runs as f64 / n as f64;
    assert!(rate <= p + 3.0 * se, "{rate}");
}

#[test]
fn drift_grows_with_process_noise() {
    let model = MotionModel::new(ModelParams::default()).unwrap();
    let world = open2d();
    let steps = (60.0 / model.dt()).round() as usize;
    let mut errors = Vec::new();
    for scale in [1.0, 4.0, 16.0] {
        let mut total = 0.0;
        for seed in 0..10 {
            let start = Belief::exact(ModelKind::Unicycle, &[0.0, 0.0, 0.0, 0.0]).unwrap();
            let drift = DriftSpec { noise_scale: scale, bias: Vec::new() };
            let mut ex = Executor::new(model.clone(), start, drift, 0.3, rng(seed));
            ex.dispatch(vec![Command { r: vec![0.0, 0.0, 0.0, 0.0], steps }]);
            let mut sum = 0.0;
            while !ex.is_idle() {
                ex.tick(&world);
                let t = ex.truth();
                let m = &ex.belief().mean;
                sum += ((t[0] - m[0]).powi(2) + (t[1] - m[1]).powi(2)).sqrt();
            }
            total += sum / steps as f64;
        }
        errors.push(total / 10.0);
    }
    assert!(errors[0] < errors[1] && errors[1] < errors[2], "{errors:?}");
}
