//! `cascade`: train cascaded networks and run the anytime, noise, and
//! out-of-distribution analyses on their checkpoints.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use cascade_core::config::KvConfig;
use cascade_core::Error;

use commands::{cmd_analysis, cmd_train, Analysis};
use output::Outputs;

#[derive(Parser, Debug)]
#[command(
    name = "cascade",
    version,
    about = "Cascaded residual networks with TD(lambda) training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// `key = value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Clone, Copy, Debug)]
enum Command {
    /// Train a network; writes checkpoint.json, metrics.csv, config.txt.
    Train,
    /// Speed-accuracy curve, selection latency, compliance, and prototypicality.
    Eval,
    /// Persistent accuracy and transient DIP under input corruption.
    Noise,
    /// Out-of-distribution detection from output traces.
    Metacog,
    /// Dump per-instance output traces.
    Rollout,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Noise => "noise",
            Command::Metacog => "metacog",
            Command::Rollout => "rollout",
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("CASCADE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::config("CASCADE_THREADS", format!("`{raw}` is not a thread count")))?;
    if n == 0 {
        return Err(Error::config("CASCADE_THREADS", "must be at least 1").into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot size the thread pool")
}

fn load_config(cli: &Cli) -> Result<KvConfig> {
    let mut kv = match &cli.config {
        Some(path) => KvConfig::load(path)?,
        None => KvConfig::new(),
    };
    for assignment in &cli.set {
        kv.assign(assignment)?;
    }
    if let Some(seed) = cli.seed {
        kv.set("seed", seed);
    }
    Ok(kv)
}

fn run(cli: &Cli) -> Result<output::RunManifest> {
    configure_threads()?;
    let kv = load_config(cli)?;
    let mut out = Outputs::create(&cli.out)?;
    let resolved = match cli.command {
        Command::Train => cmd_train(&kv, &mut out)?,
        Command::Eval => cmd_analysis(Analysis::Eval, &kv, &mut out)?,
        Command::Noise => cmd_analysis(Analysis::Noise, &kv, &mut out)?,
        Command::Metacog => cmd_analysis(Analysis::Metacog, &kv, &mut out)?,
        Command::Rollout => cmd_analysis(Analysis::Rollout, &kv, &mut out)?,
    };
    let seed = resolved.get_or("seed", 0)?;
    out.finish(cli.command.name(), seed, resolved.entries().clone())
}

/// Bad keys and values are usage errors, like bad flags.
fn is_usage(err: &anyhow::Error) -> bool {
    err.chain()
        .any(|e| matches!(e.downcast_ref::<Error>(), Some(Error::Config { .. })))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(manifest) => {
            eprintln!(
                "{}: wrote {} files to {}",
                manifest.command,
                manifest.files.len() + 1,
                manifest.out_dir
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_usage(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
