use std::path::PathBuf;
use std::process::ExitCode;

use aoi_harness::runner::{run, RunOptions};
use aoi_harness::spec::{ExperimentSpec, PolicyKind, Sweep};
use aoi_harness::summary::summarize;
use aoi_harness::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "aoi-uav",
    version,
    about = "UAV status-update collection: train, evaluate, sweep"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment file (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Policies to run (repeat or comma-separate).
    #[arg(long, value_delimiter = ',')]
    policy: Vec<PolicyKind>,
    /// Training episodes.
    #[arg(long)]
    episodes: Option<u32>,
    /// Progress on stderr.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the DQN agent on the configured scenario (no sweep).
    Train(Common),
    /// Evaluate policies on the configured scenario (no sweep).
    Eval {
        #[command(flatten)]
        common: Common,
        /// Evaluate a saved network instead of training one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the configured sweep.
    Sweep(Common),
    /// Evaluate policies next to the exact optimum (tiny scenarios only).
    OracleCompare(Common),
    /// Aggregate a metrics file into summary.csv and series_<policy>.csv.
    Summarize {
        metrics: PathBuf,
        /// Directory for the outputs; defaults to the metrics file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ExperimentSpec> {
    let mut spec = match &common.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if let Some(out) = &common.out {
        spec.output_dir = out.clone();
    }
    if !common.policy.is_empty() {
        spec.policies = common.policy.clone();
    }
    if let Some(ep) = common.episodes {
        spec.train.episodes = ep;
    }
    Ok(spec)
}

fn execute(cli: Cli) -> Result<()> {
    let (spec, opts) = match cli.command {
        Command::Summarize { metrics, out } => {
            let dir = out.unwrap_or_else(|| {
                metrics
                    .parent()
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            let (summary, files) = summarize(&metrics, &dir, None)?;
            print_summary(&summary);
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            return Ok(());
        }
        Command::Train(common) => {
            let mut spec = load(&common)?;
            spec.policies = vec![PolicyKind::Dqn];
            spec.sweep = Sweep::default();
            (
                spec,
                RunOptions {
                    verbose: common.verbose,
                    ..Default::default()
                },
            )
        }
        Command::Eval { common, checkpoint } => {
            let mut spec = load(&common)?;
            spec.sweep = Sweep::default();
            (
                spec,
                RunOptions {
                    checkpoint,
                    verbose: common.verbose,
                },
            )
        }
        Command::Sweep(common) => {
            let spec = load(&common)?;
            (
                spec,
                RunOptions {
                    verbose: common.verbose,
                    ..Default::default()
                },
            )
        }
        Command::OracleCompare(common) => {
            let mut spec = load(&common)?;
            if !spec.policies.contains(&PolicyKind::Oracle) {
                spec.policies.push(PolicyKind::Oracle);
            }
            (
                spec,
                RunOptions {
                    verbose: common.verbose,
                    ..Default::default()
                },
            )
        }
    };
    let out = run(&spec, &opts)?;
    print_summary(&out.summary);
    eprintln!(
        "wrote {} and {}",
        out.metrics_path.display(),
        out.manifest_path.display()
    );
    Ok(())
}

fn print_summary(rows: &[aoi_harness::summary::SummaryRow]) {
    println!(
        "{:<16} {:>8} {:>4} {:>8} {:>12} {:>10} {:>8}",
        "policy", "R_cells", "N", "episodes", "mean_return", "mean_J", "success"
    );
    for r in rows {
        println!(
            "{:<16} {:>8.3} {:>4} {:>8} {:>12.4} {:>10.4} {:>8.2}",
            r.policy, r.r_cells, r.n, r.episodes, r.mean_return, r.mean_avg_aoi, r.success_rate
        );
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
