mod common;

use proptest::prelude::*;

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_stays_psd(kind in any_kind(), var in prop::collection::vec(0.0..0.5f64, 1..6), seed in any::<u64>()) {
        psd_preserved(kind, var, seed, 20)?;
    }

    #[test]
    fn kernel_mass_is_within_the_window(
        sigmas in prop::collection::vec(0.0..3.0f64, 1..4),
        h in 0.1..1.0f64,
        alpha in 0.5..0.999f64,
    ) {
        kernel_mass_window(sigmas, h, alpha)?;
    }

    #[test]
    fn log_odds_stay_clamped(scans in scan_strategy()) {
        clamp_bounds(scans)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn planned_trajectories_replay(seed in any::<u64>()) {
        replayable(seed)?;
    }

    #[test]
    fn planning_is_deterministic(seed in any::<u64>()) {
        deterministic(seed)?;
    }
}
