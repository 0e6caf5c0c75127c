use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ngrc::harness::{self, ExperimentConfig, Summary, PRESETS};
use ngrc::Error;

#[derive(Parser)]
#[command(name = "ngrc", version, about = "Next-generation reservoir computing experiments")]
struct Cli {
    command: Command,
    /// JSON config; missing fields take the preset's values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base configuration [default: lorenz]
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// Cap trajectory length at 2e4 samples
    #[arg(long)]
    desk_scale: bool,
    /// Output directory, overriding the config
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Generate,
    Train,
    ErrorCurve,
    Rollout,
    Bifurcate,
    Phase,
    FeatureHist,
    RunAll,
}

enum Failure {
    Error(Error),
    Sanity,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn load_config(cli: &Cli, preset: &str) -> Result<ExperimentConfig, Error> {
    let base = ExperimentConfig::preset(preset)?;
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, &base)?,
        None => base,
    };
    if cli.desk_scale {
        cfg = cfg.desk_scale();
    }
    cfg.with_env_overrides()
}

fn report(summary: &Summary) -> Result<(), Failure> {
    for c in &summary.checks {
        let tag = if c.pass { "ok  " } else { "FAIL" };
        eprintln!("[{tag}] {}: {} (bound {})", c.name, c.value, c.bound);
    }
    eprintln!("{} finished in {:.1}s", summary.command, summary.runtime_seconds);
    if summary.pass {
        Ok(())
    } else {
        Err(Failure::Sanity)
    }
}

fn run_one(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(Error::from)?;
    let summary = match cmd {
        Command::Generate => harness::cmd_generate(cfg, out)?,
        Command::Train => harness::cmd_train(cfg, out)?,
        Command::ErrorCurve => harness::cmd_error_curve(cfg, out)?,
        Command::Rollout => harness::cmd_rollout(cfg, out)?,
        Command::Bifurcate => harness::cmd_bifurcate(cfg, out)?,
        Command::Phase => harness::cmd_phase(cfg, out)?,
        Command::FeatureHist => harness::cmd_feature_hist(cfg, out)?,
        Command::RunAll => harness::cmd_run_all(cfg, out)?,
    };
    report(&summary)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    // without a config or preset, run-all covers every preset
    if cli.command == Command::RunAll && cli.config.is_none() && cli.preset.is_none() {
        let root = cli.out.clone().unwrap_or_else(|| ExperimentConfig::default().output_dir);
        let mut result = Ok(());
        for preset in PRESETS {
            eprintln!("== {preset}");
            let cfg = load_config(cli, preset)?;
            match run_one(Command::RunAll, &cfg, &root.join(preset)) {
                Err(Failure::Sanity) => result = Err(Failure::Sanity),
                other => other?,
            }
        }
        return result;
    }
    let cfg = load_config(cli, cli.preset.as_deref().unwrap_or("lorenz"))?;
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    run_one(cli.command, &cfg, &out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Sanity) => {
            eprintln!("error: one or more sanity bounds failed");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
