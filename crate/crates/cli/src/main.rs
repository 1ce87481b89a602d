//! `vsring`: runs sparse ring attention checks and experiments from one
//! TOML config.
//!
//! Exit status: 0 when every executed check passed, 1 when a check failed
//! or a run errored, 2 for configuration errors.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vsring_core::ring::ExecMode;

use crate::commands::Ctx;
use crate::config::{ConfigError, OUT_DIR_ENV};
use crate::output::OutDir;

#[derive(Parser)]
#[command(name = "vsring", version, about = "Sparse ring attention checks and experiments")]
struct Cli {
    /// TOML config; absent sections take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// override one key, e.g. `--set ring.world=8` (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// output directory; overrides the config and VSRING_OUT_DIR
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// worker threads; more than one also runs ranks concurrently
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sparse, ring and hierarchical ring attention against dense attention
    AttnCheck {
        /// drop one block from the executed index (negative control)
        #[arg(long)]
        corrupt_index: bool,
    },
    /// Estimate vertical-slash patterns
    Pattern,
    /// Run the configured ring forward and backward and log every step
    RingSim,
    /// Compare load imbalance across layouts
    Balance {
        /// analyze an existing step log CSV instead
        #[arg(long)]
        logs: Option<PathBuf>,
    },
    /// Latency breakdown of the flat and hierarchical rings
    Latency,
    /// Relative-position checks of RoPE score expectations
    Rope,
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut cfg = config::load(cli.config.as_deref(), std::env::var(OUT_DIR_ENV).ok(), &cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.out_dir {
        cfg.out_dir = dir;
    }
    if cli.workers == 0 {
        return Err(ConfigError("--workers must be at least 1".into()).into());
    }
    cfg.validate()?;
    rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global()?;
    let mode = if cli.workers > 1 { ExecMode::Threaded } else { ExecMode::Sequential };
    let out = OutDir::create(&cfg.out_dir)?;
    out.text("config.toml", &toml::to_string(&cfg)?)?;
    let ctx = Ctx { cfg, mode, out };
    match cli.cmd {
        Cmd::AttnCheck { corrupt_index } => commands::attn_check(&ctx, corrupt_index),
        Cmd::Pattern => commands::pattern(&ctx),
        Cmd::RingSim => commands::ring_sim(&ctx),
        Cmd::Balance { logs } => commands::balance(&ctx, logs.as_deref()),
        Cmd::Latency => commands::latency(&ctx),
        Cmd::Rope => commands::rope(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
