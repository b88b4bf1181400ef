//! Command-line driver for the training and evaluation pipeline.
//!
//! `RETRO_LOG` controls log verbosity (error/warn/info/debug/trace).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use retro::config::ExperimentConfig;
use retro::stages;

#[derive(Parser)]
#[command(
    name = "retro",
    about = "Self-supervised distillation experiments: teacher pretraining, \
             student distillation, and representation evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct StageArgs {
    /// Experiment config file (flat `key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. This build computes single-threaded for bitwise
    /// reproducibility; values above 1 are accepted but have no effect.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Contrastively pretrain the teacher network.
    Pretrain(StageArgs),
    /// Train a student (baseline_moco, disco, or retro mode).
    Distill(StageArgs),
    /// Linear probe on the frozen student encoder.
    Probe(StageArgs),
    /// Cosine k-nearest-neighbor evaluation of the student encoder.
    Knn(StageArgs),
    /// Fine-tune the student on a label fraction.
    Finetune(StageArgs),
    /// Collate all runs under an output directory into summary tables.
    Export {
        /// Experiment output directory holding the run subdirectories.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &StageArgs) -> retro::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| retro::error::io_err(&args.config, e))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if args.threads == 0 {
        return Err(retro::error::format_err("--threads must be at least 1"));
    }
    if args.threads > 1 {
        log::warn!(
            "--threads {} requested, but this build computes single-threaded; \
             continuing with 1 (results stay bitwise reproducible)",
            args.threads
        );
    }
    Ok(cfg)
}

fn run() -> retro::Result<()> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Pretrain(a) => {
            stages::run_pretrain(&load_config(a)?)?;
        }
        Cmd::Distill(a) => {
            stages::run_distill(&load_config(a)?)?;
        }
        Cmd::Probe(a) => {
            let report = stages::run_probe(&load_config(a)?)?;
            println!("probe top1 {:.4} top5 {:.4}", report.top1, report.top5);
        }
        Cmd::Knn(a) => {
            let report = stages::run_knn(&load_config(a)?)?;
            println!("knn top1 {:.4}", report.top1);
        }
        Cmd::Finetune(a) => {
            let report = stages::run_finetune(&load_config(a)?)?;
            println!("finetune top1 {:.4} top5 {:.4}", report.top1, report.top5);
        }
        Cmd::Export { out } => {
            let (summary, curves) = stages::run_export(out)?;
            println!("wrote {}", summary.display());
            println!("wrote {}", curves.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("RETRO_LOG"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
