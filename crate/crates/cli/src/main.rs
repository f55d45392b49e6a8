//! `superot`: synthesize data, preprocess, train transport models, run the
//! Sinkhorn baseline, evaluate and ablate, each step leaving a manifest.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use superot_core::nets::Method;

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "superot", version, about = "Lineage-guided optimal transport experiments")]
struct Cli {
    /// TOML experiment config; defaults are used for anything it omits
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// run seed (the generator seed for `synth`); overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// output directory [default: $SUPEROT_OUT/<command>, else runs/<command>]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// worker threads for the ablation grid
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// dataset directory written by `synth`; overrides data.dir
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    SuperOt,
    Cgan,
    GanOt,
    Supervised,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::SuperOt => Method::SuperOt,
            MethodArg::Cgan => Method::Cgan,
            MethodArg::GanOt => Method::GanOt,
            MethodArg::Supervised => Method::Supervised,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic branching dataset
    Synth,
    /// Fit the preprocessing for one seed and export model-space matrices
    Preprocess,
    /// Train one method
    Train {
        #[arg(value_enum)]
        method: MethodArg,
        /// labeled pairs for super_ot; overrides train.n_pairs
        #[arg(long)]
        pairs: Option<usize>,
        /// overrides train.max_epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// continue from a checkpoint written by an earlier run
        #[arg(long)]
        resume: Option<PathBuf>,
        /// `preprocess` output to verify against
        #[arg(long)]
        preprocessed: Option<PathBuf>,
        /// epochs between checkpoint writes
        #[arg(long, default_value_t = 50)]
        checkpoint_every: usize,
    },
    /// Entropic OT baseline from test day-2 cells to day-4/6 cells
    Sinkhorn,
    /// Score trained checkpoints and Sinkhorn runs; DE analysis over the checkpoints
    Eval {
        /// `train` or `sinkhorn` output directories
        artifacts: Vec<PathBuf>,
        /// also score the identity transport for every seed involved
        #[arg(long)]
        identity: bool,
    },
    /// Super-OT with and without the transport cost over pair counts and seeds
    Ablate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess => "preprocess",
            Command::Train { .. } => "train",
            Command::Sinkhorn => "sinkhorn",
            Command::Eval { .. } => "eval",
            Command::Ablate => "ablate",
        }
    }
}

fn default_out(command: &str) -> PathBuf {
    let root = std::env::var_os("SUPEROT_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(command)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &cli.data {
        cfg.data.dir = Some(dir.clone());
    }
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let out = cli.out.clone().unwrap_or_else(|| default_out(cli.command.name()));
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    let seed = cfg.train.seed;
    let manifest = match &cli.command {
        Command::Synth => {
            if let Some(s) = cli.seed {
                cfg.data.synth.seed = s;
            }
            commands::synth(&cfg, &out)?
        }
        Command::Preprocess => commands::preprocess(&cfg, seed, &out)?,
        Command::Train { method, pairs, epochs, resume, preprocessed, checkpoint_every } => {
            if let Some(e) = epochs {
                cfg.train.max_epochs = *e;
            }
            if let Some(n) = pairs {
                cfg.train.n_pairs = *n;
            }
            let args = commands::TrainArgs {
                method: (*method).into(),
                pairs: *pairs,
                seed,
                epochs: *epochs,
                resume: resume.as_deref(),
                preprocessed: preprocessed.as_deref(),
                checkpoint_every: *checkpoint_every,
            };
            commands::train(&cfg, &args, &out)?
        }
        Command::Sinkhorn => commands::sinkhorn(&cfg, seed, &out)?,
        Command::Eval { artifacts, identity } => commands::eval(&cfg, artifacts, *identity, &out)?,
        Command::Ablate => {
            if let Some(s) = cli.seed {
                cfg.eval.seeds = vec![s];
            }
            commands::ablate(&cfg, &cfg.eval.seeds, cli.threads, &out)?
        }
    };
    report(&out, &manifest);
    Ok(())
}

fn report(out: &Path, m: &manifest::RunManifest) {
    println!("{} -> {}", m.command, out.display());
    for (name, digest) in &m.outputs {
        println!("  {name}  {}", &digest[..16]);
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
