//! Command-line front end for the forecasting pipeline.
//!
//! Exit codes: 0 success, 2 configuration/validation error, 1 runtime
//! failure.

use clap::{Parser, Subcommand};
use fcast_core::pipeline::{self, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fcast",
    version,
    about = "Daily price-return forecasting: simulation, expanding-window backtests, forecast combination, evaluation, attribution, changepoints, and portfolio utility"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the configured worker count (outputs are identical for any value).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a synthetic price panel; writes panel.csv and truth.json.
    Simulate,
    /// Full pipeline: fit the model zoo per window, combine, evaluate.
    Run,
    /// Rebuild the evaluation reports from a saved predictions file.
    Evaluate {
        /// Predictions file (defaults to <out>/predictions.csv).
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
    },
    /// Feature importance, group attribution, and marginal responses.
    Importance,
    /// Changepoint scan over per-window feature-importance paths.
    Breaks,
    /// Mean-variance portfolios with GARCH variance forecasts.
    Portfolio {
        /// Predictions file (defaults to <out>/predictions.csv).
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
    },
    /// Verify emitted reports against the run manifest digests.
    Report,
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => pipeline::load_config(path)?,
        None => RunConfig::default(),
    };
    pipeline::apply_overrides(
        &mut cfg,
        cli.seed,
        cli.jobs,
        cli.out.as_ref().map(|p| p.to_string_lossy().into_owned()),
    );
    pipeline::validate_config(&cfg)?;
    Ok(cfg)
}

fn summarize(art: &pipeline::RunArtifacts) {
    for (stage, secs) in &art.manifest.stages {
        eprintln!("  {stage}: {secs:.2}s");
    }
    if !art.manifest.warnings.is_empty() {
        eprintln!("  {} warning(s) recorded in the manifest", art.manifest.warnings.len());
    }
    println!("wrote {} file(s) to {}", art.manifest.files.len(), art.out_dir.display());
}

fn execute(cmd: &Cmd, cfg: &RunConfig) -> anyhow::Result<()> {
    match cmd {
        Cmd::Simulate => summarize(&pipeline::cmd_simulate(cfg)?),
        Cmd::Run => summarize(&pipeline::cmd_run(cfg)?),
        Cmd::Evaluate { predictions } => {
            summarize(&pipeline::cmd_evaluate(cfg, predictions.as_deref())?)
        }
        Cmd::Importance => summarize(&pipeline::cmd_importance(cfg)?),
        Cmd::Breaks => summarize(&pipeline::cmd_breaks(cfg)?),
        Cmd::Portfolio { predictions } => {
            summarize(&pipeline::cmd_portfolio(cfg, predictions.as_deref())?)
        }
        Cmd::Report => {
            let mismatches = pipeline::cmd_report(cfg)?;
            if mismatches.is_empty() {
                println!("all report digests verified in {}", cfg.out_dir);
            } else {
                anyhow::bail!("digest mismatch: {}", mismatches.join(", "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match execute(&cli.cmd, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
