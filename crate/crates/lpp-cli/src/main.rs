mod commands;
mod config;
mod exit;
mod output;

use clap::{Parser, ValueEnum};
use commands::Command;
use config::ExperimentConfig;
use exit::CliError;
use output::{Format, Provenance};
use std::path::PathBuf;
use std::process::ExitCode;

const THREADS_ENV: &str = "LPP_THREADS";

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

/// Finite-size and limiting conditional laws of exponential last-passage
/// percolation under an upper-tail conditioning.
#[derive(Debug, Parser)]
#[command(name = "lpp", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; falls back to the LPP_THREADS environment variable.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output files; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv", global = true)]
    format: FormatArg,
    /// Override a configuration key, e.g. `--set numeric.l=10,20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

fn thread_count(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Validation(format!("{THREADS_ENV}='{v}' is not a thread count")))?,
            ),
            _ => None,
        },
    };
    if n == Some(0) {
        return Err(CliError::Validation("thread count must be at least 1".into()).into());
    }
    Ok(n)
}

fn merged_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = commands::defaults(cli.command);
    if let Some(path) = &cli.config {
        cfg = cfg.overlay(&ExperimentConfig::load(path)?);
    }
    let mut flags = ExperimentConfig::default();
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        flags.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        flags.set("numeric.seed", &seed.to_string())?;
    }
    Ok(cfg.overlay(&flags))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = merged_config(&cli)?;
    let outcome = commands::run(cli.command, &cfg)?;
    let seed = if cfg.contains("numeric.seed") {
        Some(cfg.u64("numeric.seed")?)
    } else {
        None
    };
    let prov = Provenance { config: &cfg, seed };
    let format = match cli.format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    output::emit(&outcome.artifacts, format, cli.out.as_deref(), &prov)?;
    if let Some(dir) = &cli.out {
        std::fs::write(dir.join("config.txt"), cfg.canonical())?;
    }
    match outcome.failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS as u8),
        Err(e) => {
            eprintln!("lpp: {e:#}");
            ExitCode::from(exit::code_for(&e) as u8)
        }
    }
}
