use safenav::collision::{Checker, SafetyConfig};
use safenav::geometry::{PoseBelief, PoseGroup};
use safenav::mapping::{CumulativeMap, DenseGrid, FusionParams};
use safenav::motion::{Belief, ModelKind, ModelParams, MotionModel};
use safenav::planner::{
    plan, validate_trajectory, BudgetPolicy, GoalRegion, PlanStatus, PlannerConfig, PlannerMode, PlanningProblem,
};

fn open_problem<'a>(map: &'a CumulativeMap, model: &'a MotionModel, start: &[f64]) -> PlanningProblem<'a> {
    PlanningProblem {
        start: Belief::exact(ModelKind::Unicycle, start).unwrap(),
        start_control: None,
        goal: GoalRegion::around(&[10.0, 0.0], 1.0).unwrap(),
        map,
        checker: Checker::new(SafetyConfig::default(), 0.2).unwrap(),
        model,
        bounds_lo: vec![-3.0, -6.0],
        bounds_hi: vec![13.0, 6.0],
    }
}

fn empty_map() -> CumulativeMap {
    CumulativeMap::empty(PoseBelief::identity(PoseGroup::Se2), 0.5, &FusionParams::default())
}

fn sst_only() -> PlannerConfig {
    PlannerConfig { mode: PlannerMode::SingleLayer, budget_lead: 0.0001, ..Default::default() }
}

#[test]
fn start_inside_goal_gives_zero_length() {
    let map = empty_map();
    let model = MotionModel::new(ModelParams::default()).unwrap();
    let p = open_problem(&map, &model, &[10.0, 0.0, 0.0, 0.0]);
    let out = plan(&p, &PlannerConfig::default(), 1).unwrap();
    let t = out.trajectory.unwrap();
    assert_eq!(t.len(), 0);
    assert_eq!(t.total_length, 0.0);
}

#[test]
fn open_world_is_solved_reliably() {
    let map = empty_map();
    let model = MotionModel::new(ModelParams::default()).unwrap();
    let p = open_problem(&map, &model, &[0.0, 0.0, 0.0, 0.0]);
    let cfg = PlannerConfig { mode: PlannerMode::SingleLayer, budget_lead: 0.0, budget_constrained: 1.2, ..sst_only() };
    let mut solved = 0;
    for seed in 0..100 {
        let out = safenav::planner::sst_plan(
            &p,
            None,
            &safenav::planner::LiftStrategy::uniform(),
            &cfg.sst,
            &safenav::planner::Budget::new(1.2, cfg.budget.sst_rate, &cfg.budget),
            &mut rand_chacha_rng(seed),
        )
        .unwrap();
        if let Some(t) = out.best {
            solved += 1;
            assert!(t.reaches_goal);
            assert!(t.replay_error(&model).unwrap() < 1e-9);
            assert_eq!(validate_trajectory(&t, &map, &p.checker).unwrap(), (true, None));
            assert!(out.history.windows(2).all(|w| w[1].1 <= w[0].1));
        }
    }
    assert!(solved >= 95, "{solved}/100");
}

fn rand_chacha_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn doubling_the_budget_never_raises_cost() {
    let map = empty_map();
    let model = MotionModel::new(ModelParams::default()).unwrap();
    let p = open_problem(&map, &model, &[0.0, 0.0, 0.0, 0.0]);
    for seed in 0..10 {
        let base = PlannerConfig { budget_constrained: 0.6, ..Default::default() };
        let double = PlannerConfig { budget_constrained: 1.2, ..Default::default() };
        let a = plan(&p, &base, seed).unwrap();
        let b = plan(&p, &double, seed).unwrap();
        if let Some(ta) = a.trajectory {
            let tb = b.trajectory.expect("longer budget keeps the earlier solution");
            assert!(tb.total_length <= ta.total_length + 1e-12);
        }
    }
}

#[test]
fn unsafe_start_is_reported() {
    let mut g = DenseGrid::new([-4, -4, 0], [8, 8, 1], 1.0);
    g.data[0] = 0.0;
    let map = CumulativeMap::from_grid(PoseBelief::identity(PoseGroup::Se2), 0.5, g, 0.0, 0.0).unwrap();
    let model = MotionModel::new(ModelParams::default()).unwrap();
    let p = open_problem(&map, &model, &[0.0, 0.0, 0.0, 0.0]);
    let out = plan(&p, &PlannerConfig::default(), 0).unwrap();
    assert_eq!(out.status, PlanStatus::StartUnsafe);
}

#[test]
fn plans_are_reproducible_under_frozen_clock() {
    let map = empty_map();
    let model = MotionModel::new(ModelParams::default()).unwrap();
    let p = open_problem(&map, &model, &[0.0, 0.0, 0.0, 0.0]);
    let cfg = PlannerConfig { budget: BudgetPolicy::default(), ..Default::default() };
    let a = plan(&p, &cfg, 7).unwrap();
    let b = plan(&p, &cfg, 7).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.lead, b.lead);
}
