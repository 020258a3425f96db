//! Command-line entry point: generate problem instances, run experiments,
//! aggregate curves, and self-check the implementation.

use clap::{Parser, Subcommand};
use recnac::harness::{
    aggregate_ci, read_curve_csv, run_experiment, ExperimentConfig, ExperimentKind, CI_Z_90,
    OUT_DIR_ENV,
};
use recnac::pomdp::random_pomdp;
use recnac::verify::{all_pass, overrides_from_toml, run_verify};
use recnac::{Error, Result};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "recnac",
    about = "Recurrent natural actor-critic experiments on small POMDPs",
    long_about = None,
    after_help = format!("Output directories default to ${OUT_DIR_ENV}, then ./recnac-out.")
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random POMDP and write it as JSON.
    GenPomdp {
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        obs: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a temporal-difference evaluation sweep from a TOML config.
    RunRecTd {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a natural actor-critic sweep from a TOML config.
    RunRecNac {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run deterministic mean-path evaluation from a TOML config.
    RunMeanPath {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the self-check suite; exits nonzero if any check fails.
    Verify {
        /// TOML file with a [verify.bounds] or [bounds] table of overrides.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Aggregate per-trial curve CSVs into a confidence-band CSV.
    Aggregate {
        #[arg(long)]
        out: PathBuf,
        /// Input CSVs with an iteration,value header.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn run_sweep(config: &Path, out: Option<PathBuf>, kind: ExperimentKind) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    cfg.kind = kind;
    if let Some(dir) = out {
        cfg.output = Some(dir);
    }
    let report = run_experiment(&cfg)?;
    println!("wrote {} files under {}", report.csv_files.len() + 2, report.out_dir.display());
    println!("metadata: {}", report.metadata_file.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenPomdp { states, obs, actions, seed, out } => {
            let pomdp = random_pomdp(states, obs, actions, seed)?;
            pomdp.save(&out)?;
            println!(
                "wrote {} ({} states, {} observations, {} actions)",
                out.display(),
                states,
                obs,
                actions
            );
            Ok(())
        }
        Command::RunRecTd { config, out } => run_sweep(&config, out, ExperimentKind::RecTd),
        Command::RunRecNac { config, out } => run_sweep(&config, out, ExperimentKind::RecNac),
        Command::RunMeanPath { config, out } => run_sweep(&config, out, ExperimentKind::MeanPath),
        Command::Verify { config } => {
            let overrides: HashMap<String, f64> = match config {
                Some(path) => overrides_from_toml(&std::fs::read_to_string(path)?)?,
                None => HashMap::new(),
            };
            let results = run_verify(&overrides)?;
            for r in &results {
                println!(
                    "{:<20} residual {:>12.3e}  bound {:>12.3e}  {}",
                    r.name,
                    r.residual,
                    r.bound,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            if all_pass(&results) {
                Ok(())
            } else {
                let failed = results.iter().filter(|r| !r.pass).count();
                Err(Error::InvalidArgument(format!("{failed} verify checks failed")))
            }
        }
        Command::Aggregate { out, inputs } => {
            let curves = inputs
                .iter()
                .map(|p| read_curve_csv(p))
                .collect::<Result<Vec<_>>>()?;
            let bundle = aggregate_ci(&curves, CI_Z_90)?;
            if bundle.degenerate {
                eprintln!("warning: single input, confidence band is degenerate");
            }
            let mut text = String::from("iteration,mean,lo,hi\n");
            for i in 0..bundle.mean.len() {
                text.push_str(&format!(
                    "{i},{},{},{}\n",
                    bundle.mean[i], bundle.lo[i], bundle.hi[i]
                ));
            }
            std::fs::write(&out, text)?;
            println!("aggregated {} curves into {}", bundle.n_curves, out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
