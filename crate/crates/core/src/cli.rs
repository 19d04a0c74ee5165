//! Command implementations behind the `safenav` binary.

use std::path::{Path, PathBuf};

use crate::bench::{
    bench_collision, bench_planner_with, write_collision_csv, write_planner_csv, BenchStrategy, CollisionBenchSpec,
    PlannerBenchSpec,
};
use crate::config::MissionConfig;
use crate::error::{Error, Result};
use crate::export::{write_json, MapDump};
use crate::manager::{Mission, RunReport};
use crate::planner::LiftStrategy;

impl Error {
    /// Process exit code: 2 for bad input or configuration, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::UnknownWorld(_) | Error::Io(_) => 2,
            _ => 3,
        }
    }
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Run one mission and write its artifacts into `out`:
/// `events.jsonl`, `trajectory.csv`, `trajectory.json`, `map.json`,
/// `tree.json` and `report.json`.
pub fn cmd_run_mission(cfg: MissionConfig, out: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out)?;
    let mut mission = Mission::new(cfg)?;
    let mut report = mission.run()?;
    let events = out.join("events.jsonl");
    mission.write_events(&events)?;
    let traj_csv = out.join("trajectory.csv");
    mission.exec.write_csv(&traj_csv)?;
    let traj_json = out.join("trajectory.json");
    write_json(&mission.exec.log, &traj_json)?;
    let tree = out.join("tree.json");
    write_json(&mission.last_tree, &tree)?;
    let mut artifacts = vec![path_string(&traj_csv), path_string(&traj_json), path_string(&tree)];
    if let Some(map) = &mission.last_map {
        let p = out.join("map.json");
        write_json(&MapDump::from_map(map), &p)?;
        artifacts.push(path_string(&p));
    }
    let iters = out.join("iterations.json");
    write_json(&mission.iterations, &iters)?;
    artifacts.push(path_string(&iters));
    report.event_log = Some(path_string(&events));
    report.artifacts = artifacts;
    write_json(&report, &out.join("report.json"))?;
    Ok(report)
}

pub fn cmd_bench_collision(spec: &CollisionBenchSpec, out: &Path) -> Result<PathBuf> {
    let rows = bench_collision(spec)?;
    write_collision_csv(&rows, out)?;
    Ok(out.to_path_buf())
}

/// Settings of `bench-planner` beyond the mission configuration.
#[derive(Debug, Clone)]
pub struct PlannerBenchArgs {
    pub scenario: String,
    pub strategies: Vec<BenchStrategy>,
    pub seeds: usize,
    pub d0: f64,
    pub growth_rate: f64,
}

pub fn cmd_bench_planner(cfg: &MissionConfig, args: &PlannerBenchArgs, out: &Path) -> Result<PathBuf> {
    let mut planner = cfg.planner.clone();
    planner.lift = LiftStrategy { d0: args.d0, growth_rate: args.growth_rate, ..planner.lift };
    planner.validate()?;
    let spec = PlannerBenchSpec {
        scenario: args.scenario.clone(),
        strategies: args.strategies.clone(),
        seeds: args.seeds,
        seed: cfg.mission.seed,
        planner,
        safety: cfg.safety,
        resolution: if args.scenario.ends_with("3d") { 0.2 } else { cfg.map.resolution },
        r_body: cfg.mission.r_body,
    };
    let rows = bench_planner_with(&spec, |_| {})?;
    write_planner_csv(&rows, out)?;
    Ok(out.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(Error::UnknownWorld("x".into()).exit_code(), 2);
        assert_eq!(Error::Invariant("x".into()).exit_code(), 3);
        assert_eq!(Error::NotPsd(-1.0).exit_code(), 3);
    }
}
