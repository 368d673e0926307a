//! Command-line front end: configuration, subcommands and output files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::{parse_bins, ConfigError, Range, RunConfig};
use crate::output::Output;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "TFSWAP_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] tfswap_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tfswap",
    version,
    about = "Spectrally resolved entanglement swapping: models and Monte Carlo"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; falls back to $TFSWAP_OUT, the config `out` key, then `results`.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Random seed for Monte Carlo commands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Points per spectral grid axis.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Herald bins `j,k`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub bins: Option<String>,
    /// Signal delays `start:stop:count` or a single value (ps).
    #[arg(long = "tau-s", global = true, allow_hyphen_values = true)]
    pub tau_s: Option<String>,
    /// Idler delays `start:stop:count` or a single value (ps).
    #[arg(long = "tau-i", global = true, allow_hyphen_values = true)]
    pub tau_i: Option<String>,
    /// Fit the trace and add the parameters to the output header.
    #[arg(long = "emit-fit", global = true)]
    pub emit_fit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sampled joint spectral amplitude and intensity.
    Jsa,
    /// Schmidt number, intrinsic and with detector blur.
    Schmidt,
    /// Herald probability over pixel pairs, with the pixel calibration.
    PjkMap,
    /// Heralded signal JSI for one bin pair.
    HeraldJsi,
    /// JSI summed over all heralds.
    SummedJsi,
    /// Four-fold fringe of one bin pair against signal delay.
    Fringes,
    /// Summed four-fold signal against signal delay.
    Peak,
    /// Summed four-fold signal over both delays.
    Peak2d,
    /// Bin-pair fringes for each idler delay.
    Waterfall,
    /// Monte Carlo time tags and coincidence histograms.
    Simulate,
    /// Simulated delay scans with single-source backgrounds removed.
    SubtractBackground,
    /// Purity bounds of filtered heralded states.
    Purity,
    /// Pump-phase fringes and per-bin visibilities for distinguishable sources.
    Distinguishability,
    /// Overlaps of heralded modes and mutually orthogonal subsets.
    Orthomodes,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Jsa => "jsa",
            Command::Schmidt => "schmidt",
            Command::PjkMap => "pjk-map",
            Command::HeraldJsi => "herald-jsi",
            Command::SummedJsi => "summed-jsi",
            Command::Fringes => "fringes",
            Command::Peak => "peak",
            Command::Peak2d => "peak2d",
            Command::Waterfall => "waterfall",
            Command::Simulate => "simulate",
            Command::SubtractBackground => "subtract-background",
            Command::Purity => "purity",
            Command::Distinguishability => "distinguishability",
            Command::Orthomodes => "orthomodes",
        }
    }
}

/// Configuration after command-line overrides.
pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let flag = |key: &str, reason: String| ConfigError {
        line: None,
        key: key.into(),
        reason,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(g) = cli.grid {
        cfg.grid = g;
    }
    if let Some(b) = &cli.bins {
        cfg.bins = parse_bins(b).map_err(|e| flag("--bins", e))?;
    }
    if let Some(t) = &cli.tau_s {
        cfg.tau_s = t.parse::<Range>().map_err(|e| flag("--tau-s", e))?;
    }
    if let Some(t) = &cli.tau_i {
        cfg.tau_i = t.parse::<Range>().map_err(|e| flag("--tau-i", e))?;
    }
    if cli.threads == Some(0) {
        return Err(flag("--threads", "must be positive".into()).into());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run one command; returns the files written and the terminal lines.
pub fn run(cli: &Cli) -> Result<(Vec<PathBuf>, Vec<String>), CliError> {
    let cfg = resolve(cli)?;
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let mut out = Output::new(&dir)?;
    let ctx = Context {
        cfg: &cfg,
        emit_fit: cli.emit_fit,
    };
    let result = pool.install(|| dispatch(cli.command, &ctx, &mut out)).and_then(|lines| {
        out.manifest(cli.command.name(), &cfg.hash(), cfg.seed, &[])?;
        Ok(lines)
    });
    match result {
        Ok(lines) => Ok((out.files().to_vec(), lines)),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn dispatch(cmd: Command, ctx: &Context, out: &mut Output) -> Result<Vec<String>, CliError> {
    use commands as c;
    match cmd {
        Command::Jsa => c::jsa(ctx, out),
        Command::Schmidt => c::schmidt(ctx, out),
        Command::PjkMap => c::pjk_map(ctx, out),
        Command::HeraldJsi => c::herald_jsi(ctx, out),
        Command::SummedJsi => c::summed_jsi_cmd(ctx, out),
        Command::Fringes => c::fringes(ctx, out),
        Command::Peak => c::peak(ctx, out),
        Command::Peak2d => c::peak2d_cmd(ctx, out),
        Command::Waterfall => c::waterfall(ctx, out),
        Command::Simulate => c::simulate(ctx, out),
        Command::SubtractBackground => c::background(ctx, out),
        Command::Purity => c::purity(ctx, out),
        Command::Distinguishability => c::distinguishability(ctx, out),
        Command::Orthomodes => c::orthomodes(ctx, out),
    }
}
