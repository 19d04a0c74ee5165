use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use safenav::bench::{BenchStrategy, CollisionBenchSpec, DESK_ADAPTIVE};
use safenav::cli::{cmd_bench_collision, cmd_bench_planner, cmd_run_mission, PlannerBenchArgs};
use safenav::config::MissionConfig;
use safenav::export::{export, Artifact, Format};
use safenav::{Error, Result};

#[derive(Parser)]
#[command(name = "safenav", version, about = "Uncertainty-aware mapping and belief-space planning")]
struct Cli {
    /// Mission configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set safety.p_safe=0.9`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mission and write its log, map, tree and report.
    RunMission {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare the alpha-kernel checker with chance constraints on random scenes.
    BenchCollision {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0usize, 100, 200])]
        n_o: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.5, 3.0])]
        sigma: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.9, 0.95])]
        p_safe: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        beliefs: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0.99)]
        alpha: f64,
        #[arg(long, default_value = "collision.csv")]
        out: PathBuf,
    },
    /// Solve one scenario repeatedly with several lift strategies.
    BenchPlanner {
        #[arg(long, default_value = "corridor3d")]
        scenario: String,
        /// Comma separated: slp, rigid:D, biased:P, adaptive.
        #[arg(long, value_delimiter = ',', default_value = "slp,rigid:0,rigid:1,rigid:3,rigid:12,biased:0.5,adaptive")]
        strategies: Vec<String>,
        #[arg(long, default_value_t = 200)]
        seeds: usize,
        /// Initial adaptive radius.
        #[arg(long, default_value_t = DESK_ADAPTIVE.d0)]
        d0: f64,
        /// Adaptive growth rate, m/s of planning time.
        #[arg(long, default_value_t = DESK_ADAPTIVE.growth_rate)]
        growth_rate: f64,
        #[arg(long, default_value = "planner.csv")]
        out: PathBuf,
    },
    /// Convert a mission dump (map, tree, trajectory) to PGM or CSV.
    Export {
        #[arg(long)]
        artifact: String,
        #[arg(long)]
        format: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// z layer for PGM slices of 3-D maps.
        #[arg(long)]
        z: Option<i64>,
    },
}

fn config(cli: &Cli) -> Result<MissionConfig> {
    let mut set = cli.set.clone();
    if let Some(s) = cli.seed {
        set.push(format!("mission.seed={s}"));
    }
    MissionConfig::load(cli.config.as_deref(), &set)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::RunMission { out } => {
            let report = cmd_run_mission(config(&cli)?, out)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Invariant(e.to_string()))?);
        }
        Command::BenchCollision { n_o, sigma, p_safe, beliefs, samples, alpha, out } => {
            let spec = CollisionBenchSpec {
                n_o: n_o.clone(),
                sigmas: sigma.clone(),
                p_safe: p_safe.clone(),
                beliefs: *beliefs,
                mc_samples: *samples,
                alpha: *alpha,
                seed: cli.seed.unwrap_or(0),
                ..Default::default()
            };
            println!("{}", cmd_bench_collision(&spec, out)?.display());
        }
        Command::BenchPlanner { scenario, strategies, seeds, d0, growth_rate, out } => {
            let args = PlannerBenchArgs {
                scenario: scenario.clone(),
                strategies: strategies.iter().map(|s| s.parse::<BenchStrategy>()).collect::<Result<_>>()?,
                seeds: *seeds,
                d0: *d0,
                growth_rate: *growth_rate,
            };
            println!("{}", cmd_bench_planner(&config(&cli)?, &args, out)?.display());
        }
        Command::Export { artifact, format, input, output, z } => {
            export(artifact.parse::<Artifact>()?, format.parse::<Format>()?, input, output, *z)?;
            println!("{}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
