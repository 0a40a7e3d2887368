//! Batch CLI for the click-prediction pipeline.
//!
//! Subcommands mirror the pipeline stages; every run is driven by one
//! JSON config (flags override its scalars) and writes its artifacts
//! plus `run_manifest.json` under the output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use clickcast::config::{ConfigError, RunConfig};
use clickcast::runner::{
    cmd_evaluate, cmd_generate, cmd_preprocess, cmd_report, cmd_select, cmd_tune, RunnerError,
};

#[derive(Parser)]
#[command(
    name = "clickcast",
    version,
    about = "Daily click-volume prediction: preprocessing, base regressors, feature elimination, Bayesian tuning, and ensembles over a rolling test protocol"
)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts; overrides the config's
    /// output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic table and write data.csv.
    Generate,
    /// Fit the first-window preprocessing pipeline (pipeline.json).
    Preprocess,
    /// Rank features and run recursive elimination (subspace.json).
    #[command(name = "select-features")]
    SelectFeatures,
    /// Bayesian-optimize the tuned algorithms (trials/, tuned.json).
    Tune,
    /// Run the full rolling evaluation end to end.
    Evaluate,
    /// Re-render report.csv and report.md from report.json.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let cfg = match &cli.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path).map_err(|e| {
                ConfigError::Invalid(format!("cannot read config {}: {e}", path.display()))
            })?;
            RunConfig::from_json(&raw)?
        }
        None => RunConfig::default(),
    };
    Ok(cfg.with_overrides(cli.seed, cli.out.as_deref()))
}

fn run(cli: &Cli) -> Result<(), RunnerError> {
    let cfg = load_config(cli)?;
    let out = cfg.output_dir.clone().ok_or_else(|| {
        ConfigError::Invalid("no output directory: set --out or output_dir".into())
    })?;

    match cli.command {
        Command::Generate => {
            let path = cmd_generate(&cfg, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Preprocess => {
            let path = cmd_preprocess(&cfg, &out)?;
            println!("wrote {}", path.display());
        }
        Command::SelectFeatures => {
            let path = cmd_select(&cfg, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Tune => {
            let path = cmd_tune(&cfg, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Evaluate => {
            let outcome = cmd_evaluate(&cfg, &out)?;
            println!(
                "evaluated {} days x {} variants -> {}",
                outcome.report.days.len(),
                outcome.report.summaries.len(),
                out.join("report.json").display()
            );
            for s in outcome.report.summaries.iter().take(5) {
                match s.mean_r2 {
                    Some(m) => println!("  {:<24} mean r2 {m:+.4}", s.variant),
                    None => println!("  {:<24} all days failed", s.variant),
                }
            }
        }
        Command::Report => {
            let report = cmd_report(&out)?;
            println!(
                "re-rendered report.csv and report.md ({} variants)",
                report.summaries.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
