//! `memvid`: synthetic data generation, motion-encoder training,
//! full-model evaluation with decision-level fusion, memorability-weighted
//! summarization, gradient checking, and the paired ablations.
//!
//! Exit codes: 0 success, 2 configuration error, 1 runtime error (also
//! used when a gradient check fails). Reports land in `--out` as
//! `report.json` and on stdout; diagnostics go to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use memvid_core::config::RunConfig;
use memvid_core::error::Error;
use memvid_core::pipeline;
use memvid_core::report::Report;

#[derive(Parser)]
#[command(name = "memvid", version, about = "Video memorability prediction and summarization pipeline")]
struct Cli {
    /// Key=value configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for report.json and other outputs.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Repeatable key=value overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (and summarization manifests).
    GenData,
    /// Train the motion encoder and save the model.
    Train,
    /// Train the per-modality branches, fuse, and report test metrics.
    Eval,
    /// Rectify and select clips for every manifest.
    Summarize,
    /// Verify analytic gradients against central finite differences.
    GradCheck,
    /// Run the paired TMCCL arms and the mu sweep.
    Ablation,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for item in &cli.overrides {
        let Some((key, value)) = item.split_once('=') else {
            return Err(Error::Config(format!(
                "--set expects KEY=VALUE, got `{item}`"
            )));
        };
        cfg.set(key.trim(), value)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit(report: &Report) -> Result<(), Error> {
    println!("{}", report.to_json()?);
    Ok(())
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let cfg = load_config(cli)?;
    let out = cli.out.as_path();
    let ok = match cli.command {
        Command::GenData => {
            emit(&pipeline::run_gen_data(&cfg, out)?)?;
            true
        }
        Command::Train => {
            emit(&pipeline::run_train(&cfg, out)?)?;
            true
        }
        Command::Eval => {
            emit(&pipeline::run_eval(&cfg, out)?)?;
            true
        }
        Command::Summarize => {
            emit(&pipeline::run_summarize(&cfg, out)?)?;
            true
        }
        Command::GradCheck => {
            let (report, all_pass) = pipeline::run_grad_check(&cfg, out)?;
            emit(&report)?;
            if let Some(checks) = &report.grad_checks {
                for c in checks {
                    eprintln!(
                        "grad-check {:<16} max_rel_error {:.3e} (threshold {:.0e}) {}",
                        c.op,
                        c.max_rel_error,
                        c.threshold,
                        if c.pass { "PASS" } else { "FAIL" }
                    );
                }
            }
            all_pass
        }
        Command::Ablation => {
            emit(&pipeline::run_ablation(&cfg, out)?)?;
            true
        }
    };
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
