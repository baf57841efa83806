//! `tilepack` command-line front-end.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tilepack_core::pipeline::{self, PipelineError, RunOptions, StageReport};
use tilepack_core::PipelineConfig;

/// Exit code for configuration, usage and I/O errors.
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "tilepack",
    version,
    about = "Multimodal training-data preprocessing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan tile layouts, cut tiles and annotate token counts.
    Tile(StageArgs),
    /// Route records to kept / dropped / review manifests.
    Filter(StageArgs),
    /// Expand a mixture file into a shuffled epoch plan.
    Mix(MixArgs),
    /// Pack records into fixed-length sequences.
    Pack(StageArgs),
    /// Sample and token counts per modality.
    Stats(StageArgs),
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML); defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    output: PathBuf,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, value_name = "N", default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct StageArgs {
    /// Input manifest (JSONL).
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct MixArgs {
    /// Mixture file (TOML); falls back to `mixture` in the config.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn load_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(command: &Command) -> Result<StageReport, PipelineError> {
    let opts = |c: &Common| RunOptions { workers: c.workers };
    match command {
        Command::Tile(a) => pipeline::run_tile(
            &load_config(&a.common)?,
            &a.input,
            &a.common.output,
            opts(&a.common),
        ),
        Command::Filter(a) => {
            let cfg = load_config(&a.common)?;
            let scorer = pipeline::build_scorer(&cfg)?;
            pipeline::run_filter(
                &cfg,
                &a.input,
                &a.common.output,
                scorer.as_deref(),
                opts(&a.common),
            )
            .map(|r| r.0)
        }
        Command::Mix(a) => pipeline::run_mix(
            &load_config(&a.common)?,
            a.input.as_deref(),
            &a.common.output,
        ),
        Command::Pack(a) => {
            pipeline::run_pack(&load_config(&a.common)?, &a.input, &a.common.output).map(|r| r.0)
        }
        Command::Stats(a) => {
            pipeline::run_stats(&load_config(&a.common)?, &a.input, &a.common.output).map(|r| r.0)
        }
    }
}

fn print_report(report: &StageReport) -> anyhow::Result<()> {
    let json = serde_json::to_string(report).context("serializing stage report")?;
    println!("{json}");
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TILEPACK_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(report) => {
            if let Err(e) = print_report(&report) {
                eprintln!("error: {e:#}");
                return ExitCode::from(EXIT_CONFIG);
            }
            if report.record_errors > 0 {
                log::warn!(
                    "{}: {} of {} records failed; see {}",
                    report.stage,
                    report.record_errors,
                    report.records,
                    report
                        .outputs
                        .iter()
                        .map(|p| display(p))
                        .collect::<Vec<_>>()
                        .join(", ")
                );
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
