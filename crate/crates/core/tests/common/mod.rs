//! Property checks shared by the proptest suite and the acceptance run.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use safenav::bench::world_map;
use safenav::collision::{Checker, SafetyConfig};
use safenav::kernel::AlphaKernel;
use safenav::mapping::{Beam, LocalSubmap, Scan, SensorModelParams};
use safenav::motion::{Belief, ModelKind, ModelParams, MotionModel};
use safenav::planner::{plan, GoalRegion, PlannerConfig, PlanningProblem, Trajectory};
use safenav::geometry::{PoseBelief, PoseGroup};
use safenav::sim::{open2d, World};

pub fn model(kind: ModelKind) -> MotionModel {
    MotionModel::new(match kind {
        ModelKind::Unicycle => ModelParams::default(),
        ModelKind::FixedWing => ModelParams::fixed_wing(),
    })
    .unwrap()
}

pub fn any_kind() -> impl Strategy<Value = ModelKind> {
    prop_oneof![Just(ModelKind::Unicycle), Just(ModelKind::FixedWing)]
}

/// Random controls applied to a random diagonal start covariance keep the
/// covariance symmetric positive semi-definite.
pub fn psd_preserved(kind: ModelKind, var: Vec<f64>, seed: u64, n: usize) -> Result<(), TestCaseError> {
    let m = model(kind);
    let d = kind.state_dim();
    let cov = DMatrix::from_diagonal(&DVector::from_iterator(d, var.iter().cycle().take(d).copied()));
    let mut mean = DVector::zeros(d);
    if kind == ModelKind::FixedWing {
        mean[2] = 5.0;
    }
    let mut b = Belief::new(kind, mean, cov, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let c = m.sample_control(&mut rng);
        b = m.propagate(&b, &c).unwrap();
        let asym = (&b.cov - b.cov.transpose()).amax();
        prop_assert!(asym <= 1e-12 * b.cov.amax().max(1.0), "asymmetry {asym}");
        let min = b.cov.clone().symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-9 * b.cov.amax().max(1.0), "eigenvalue {min}");
    }
    Ok(())
}

/// Kernel mass lies between the confidence level and one.
pub fn kernel_mass_window(sigmas: Vec<f64>, h: f64, alpha: f64) -> Result<(), TestCaseError> {
    let k = AlphaKernel::from_sigmas(&sigmas, h, alpha).unwrap();
    let m = k.mass();
    prop_assert!(m <= 1.0 + 1e-12, "mass {m} above one");
    prop_assert!(m >= alpha - 1e-3, "mass {m} below {alpha}");
    Ok(())
}

/// Random scans never push a cell outside the log-odds bounds.
pub fn clamp_bounds(scans: Vec<(f64, f64, Vec<(f64, f64, bool)>)>) -> Result<(), TestCaseError> {
    let params = SensorModelParams::default();
    let mut sub = LocalSubmap::new(0, PoseBelief::identity(PoseGroup::Se2), 0.5, 0.0);
    for (i, (x, y, beams)) in scans.into_iter().enumerate() {
        let beams = beams
            .into_iter()
            .map(|(a, r, hit)| Beam { dir: vec![a.cos(), a.sin()], range: r, hit })
            .collect();
        sub.integrate(&Scan { pose: vec![x, y, 0.0], beams }, &params, i as f64).unwrap();
        for (_, l) in sub.cells() {
            prop_assert!((params.l_min..=params.l_max).contains(l), "log-odds {l}");
        }
    }
    Ok(())
}

pub fn scan_strategy() -> impl Strategy<Value = Vec<(f64, f64, Vec<(f64, f64, bool)>)>> {
    let beam = (0.0..std::f64::consts::TAU, 0.1..10.0f64, any::<bool>());
    prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, prop::collection::vec(beam, 1..40)), 1..30)
}

fn gap_world() -> World {
    let mut w = open2d();
    w.boxes.push(safenav::sim::Aabb::new(vec![4.0, -10.0], vec![5.0, -1.0]));
    w.boxes.push(safenav::sim::Aabb::new(vec![4.0, 1.0], vec![5.0, 10.0]));
    w
}

pub fn solve(seed: u64) -> Option<Trajectory> {
    let world = gap_world();
    let m = model(ModelKind::Unicycle);
    let map = world_map(&world, 0.25).unwrap();
    let problem = PlanningProblem {
        start: Belief::exact(ModelKind::Unicycle, &[0.0, 0.0, 0.0, 0.0]).unwrap(),
        start_control: None,
        goal: GoalRegion::new(world.goal_lo.clone(), world.goal_hi.clone()).unwrap(),
        map: &map,
        checker: Checker::new(SafetyConfig::default(), 0.3).unwrap(),
        model: &m,
        bounds_lo: world.bounds_lo.clone(),
        bounds_hi: world.bounds_hi.clone(),
    };
    plan(&problem, &PlannerConfig::default(), seed).unwrap().trajectory
}

/// Replaying the controls of a planned trajectory reproduces its beliefs.
pub fn replayable(seed: u64) -> Result<(), TestCaseError> {
    if let Some(t) = solve(seed) {
        let e = t.replay_error(&model(ModelKind::Unicycle)).unwrap();
        prop_assert!(e <= 1e-9, "replay error {e}");
    }
    Ok(())
}

/// The same seed gives the same plan.
pub fn deterministic(seed: u64) -> Result<(), TestCaseError> {
    prop_assert_eq!(solve(seed), solve(seed));
    Ok(())
}
