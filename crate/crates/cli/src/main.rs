mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{CommandFactory, Parser, Subcommand};

use crate::commands::Context;
use crate::config::{ExperimentConfig, KEYS};

#[derive(Parser)]
#[command(
    name = "speechground",
    version,
    about = "Train and evaluate speech encoders grounded in sentence embeddings",
    after_help = "Any configuration key can be overridden with --<key>=<value>, e.g. --train.epochs=10."
)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for every output; overrides paths.out_dir.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Validate the configuration and input files without computing.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Print every configuration key and exit.
    #[arg(long)]
    list_keys: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, balance and split the corpus manifests.
    Ingest,
    /// Descriptive statistics of the balanced corpus.
    Stats,
    /// Extract and cache MFCC features for every split utterance.
    Featurize,
    /// Train one model per register and seed.
    Train {
        /// Continue each run from its latest epoch checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Test-set retrieval of each register's models.
    Evaluate,
    /// Evaluate both register models on matched, crossed and combined test sets.
    CrossEval,
    /// Mean validation curves over seeds, as CSV and SVG.
    Trajectory,
}

/// Split `--section.key=value` overrides from the arguments clap handles.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let parsed = arg
            .strip_prefix("--")
            .and_then(|a| a.split_once('='))
            .filter(|(k, _)| KEYS.contains(k));
        match parsed {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => rest.push(arg),
        }
    }
    (rest, overrides)
}

fn build_config(cli: &Cli, overrides: &[(String, String)]) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for (k, v) in overrides {
        cfg.set(k, v, Path::new("."))?;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    cfg.validate()?;
    let out_dir = cfg
        .out_dir
        .clone()
        .context("no output directory: pass --out-dir or set paths.out_dir")?;
    Ok((cfg, out_dir))
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<()> {
    let (cfg, out_dir) = build_config(&cli, &overrides)?;
    let Some(command) = cli.command else {
        unreachable!("checked by main")
    };
    let ctx = Context {
        cfg,
        out_dir,
        dry_run: cli.dry_run,
    };
    match command {
        Command::Ingest => commands::ingest(&ctx),
        Command::Stats => commands::stats(&ctx),
        Command::Featurize => commands::featurize(&ctx),
        Command::Train { resume } => commands::train(&ctx, resume),
        Command::Evaluate => commands::evaluate_runs(&ctx),
        Command::CrossEval => commands::cross_eval(&ctx),
        Command::Trajectory => commands::trajectory(&ctx),
    }?;
    if ctx.dry_run {
        println!("dry run: configuration and inputs are valid");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if cli.list_keys {
        for k in KEYS {
            println!("{k}");
        }
        return ExitCode::SUCCESS;
    }
    if cli.command.is_none() {
        let _ = Cli::command().print_help();
        return ExitCode::from(2);
    }
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
