//! Command-line front end for the toolkit.
//!
//! Artifacts live in plain directories ("bundles"): `model.json`,
//! `constraints.json`, `benchspec.json`, `synthesis.json`, `theta.json`,
//! `history.json`, `trajectory.csv`, `report.json`. Each subcommand reads
//! the pieces it needs and writes its outputs into `--out`, so stages can
//! be chained by hand or through `run --config`.

mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pipeline::PipelineConfig;

#[derive(Parser)]
#[command(name = "rnnboost", version, about = "Stabilizing-gain synthesis and performance boosting for RNN plants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark plant utilities.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Synthesize the stabilizing gain and certificates for a bundle.
    Synth {
        /// Bundle directory holding model.json and constraints.json.
        #[arg(long)]
        bundle: PathBuf,
        /// Output directory (defaults to the bundle).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional synthesis options JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the boosting operator on sampled scenarios.
    Train {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rollout horizon T (overrides the config when given).
        #[arg(long)]
        horizon: Option<usize>,
        /// Number of disturbance scenarios S (overrides the config).
        #[arg(long)]
        scenarios: Option<usize>,
    },
    /// Simulate the closed loop and export the trajectory CSV.
    Simulate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Operator checkpoint; omitted means the zero boost baseline.
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        horizon: usize,
    },
    /// Run the certificate checks against a bundle.
    Verify {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte-Carlo sample count for the invariance check.
        #[arg(long, default_value_t = 10_000)]
        samples: u64,
        /// Closed-loop validation runs for constraints and ℓp bounds.
        #[arg(long, default_value_t = 20)]
        scenarios: usize,
        /// Sequence norm index: 1, 2, or inf.
        #[arg(long, default_value = "2")]
        p: String,
        #[arg(long, default_value_t = 300)]
        horizon: usize,
    },
    /// Execute a staged pipeline described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Generate a benchmark plant bundle.
    Gen {
        /// Preset name: `ph-like` or `random-<n>` (2 ≤ n ≤ 6).
        #[arg(long, default_value = "ph-like")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench {
            command: BenchCommand::Gen { preset, seed, out },
        } => pipeline::stage_generate_named(&preset, seed, &out).map(|_| true),
        Command::Synth { bundle, out, config } => {
            pipeline::cmd_synth(&bundle, out.as_deref(), config.as_deref()).map(|_| true)
        }
        Command::Train {
            bundle,
            out,
            config,
            seed,
            horizon,
            scenarios,
        } => pipeline::cmd_train(
            &bundle,
            out.as_deref(),
            config.as_deref(),
            seed,
            horizon,
            scenarios,
        )
        .map(|_| true),
        Command::Simulate {
            bundle,
            out,
            theta,
            seed,
            horizon,
        } => pipeline::cmd_simulate(&bundle, out.as_deref(), theta.as_deref(), seed, horizon)
            .map(|_| true),
        Command::Verify {
            bundle,
            out,
            theta,
            seed,
            samples,
            scenarios,
            p,
            horizon,
        } => pipeline::cmd_verify(
            &bundle,
            out.as_deref(),
            theta.as_deref(),
            seed,
            samples,
            scenarios,
            &p,
            horizon,
        ),
        Command::Run { config, out, seed } => {
            let cfg = match PipelineConfig::load(&config, out.as_deref(), seed) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(1);
                }
            };
            pipeline::run_pipeline(&cfg)
        }
    };

    if let Err(e) = &result {
        eprintln!("{}: {}", e.stage_name(), e.message());
    }
    pipeline::exit_code_for(result)
}
