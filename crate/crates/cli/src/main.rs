use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use minplus::harness::{self, OracleKind, RunConfig};
use minplus::Error;

#[derive(Parser)]
#[command(name = "minplus", version, about = "Min-plus deterministic filtering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory, overriding `io.out_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Simulation seed, overriding `seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    Grid,
    Riccati,
    None,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the model and write truth.csv and measurements.csv.
    Simulate(Common),
    /// Run the filter and write estimates.csv.
    Run {
        #[command(flatten)]
        common: Common,
        /// Reference filter to compare against.
        #[arg(long, value_enum, default_value = "none")]
        oracle: Oracle,
    },
    /// Run cluster and value pruning on the same measurements.
    ComparePruning(Common),
    /// Check the recursion and the filter against the reference solvers.
    OracleCheck(Common),
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::from_path(&common.config)?;
    if let Some(out) = &common.out {
        cfg.io.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn list(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn execute(command: &Command) -> Result<bool, Error> {
    match command {
        Command::Simulate(common) => {
            let cfg = load(common)?;
            let (sim, files) = harness::simulate_cmd(&cfg)?;
            println!("simulated {} steps", sim.measurements.len());
            list(&files);
            Ok(true)
        }
        Command::Run { common, oracle } => {
            let cfg = load(common)?;
            let kind = match oracle {
                Oracle::Grid => OracleKind::Grid,
                Oracle::Riccati => OracleKind::Riccati,
                Oracle::None => OracleKind::None,
            };
            let report = harness::run_cmd(&cfg, kind)?;
            println!("{}", report.summary);
            if let Some(gap) = report.oracle_gap {
                println!("max estimate gap to oracle: {gap:.6}");
            }
            list(&report.files);
            Ok(true)
        }
        Command::ComparePruning(common) => {
            let cfg = load(common)?;
            let (report, path) = harness::compare_pruning(&cfg)?;
            print!("{report}");
            list(&[path]);
            Ok(true)
        }
        Command::OracleCheck(common) => {
            let cfg = load(common)?;
            let report = harness::oracle_check(&cfg)?;
            println!("{report}");
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) if e.is_config() => {
            eprintln!("configuration error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("numeric failure: {e}");
            ExitCode::from(2)
        }
    }
}
