//! `qrlab`: runs one experiment from a TOML config and writes its artifacts
//! plus a hashed manifest to the output directory.
//!
//! Exit codes: 0 success, 2 invalid config, 3 numerical failure (partial
//! manifest written), 4 IO failure.

mod config;
mod error;
mod experiments;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::ExperimentConfig;
use error::RunError;
use manifest::{up_to_date, ArtifactWriter};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "qrlab", version, about = "Quasiregular dynamics experiment runner")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, env = "QRLAB_CONFIG")]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long, env = "QRLAB_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "QRLAB_THREADS", default_value_t = 0)]
    threads: usize,
    /// Progress on stderr.
    #[arg(long, env = "QRLAB_VERBOSE")]
    verbose: bool,
    /// Recompute even when the output directory holds an up-to-date run.
    #[arg(long, env = "QRLAB_FORCE")]
    force: bool,
}

fn execute(cli: &Cli) -> Result<Option<String>, RunError> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| RunError::Io(format!("{}: {e}", cli.config.display())))?;
    let cfg = ExperimentConfig::from_toml(&text)?;
    let out = cli.out.clone().or_else(|| cfg.out.clone()).ok_or_else(|| RunError::Schema("no output directory: pass --out or set `out`".into()))?;
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global().map_err(|e| RunError::Numerical(e.to_string()))?;
    }
    let digest = cfg.digest();
    if !cli.force && up_to_date(&out, &digest) {
        if cli.verbose {
            eprintln!("{}: up to date", out.display());
        }
        return Ok(None);
    }
    let mut writer = ArtifactWriter::new(&out)?;
    if cli.verbose {
        eprintln!("running {} into {}", cfg.kind.name(), out.display());
    }
    match experiments::run(&cfg, &mut writer, cli.verbose) {
        Ok(failure) => {
            writer.finish(cfg.kind.name(), &digest, failure.clone())?;
            Ok(failure)
        }
        Err(RunError::Numerical(msg)) => {
            writer.finish(cfg.kind.name(), &digest, Some(msg.clone()))?;
            Err(RunError::Numerical(msg))
        }
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(msg)) => {
            eprintln!("qrlab: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("qrlab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
