use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fidelity_runner::config::Format;
use fidelity_runner::experiments::execute;
use fidelity_runner::{RunConfig, RunError, RunResult};

/// Fidelity decay experiments for quantized kicked maps.
#[derive(Debug, Parser)]
#[command(name = "fidelity", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ensemble fidelity with optional predictor curves.
    Fidelity(RunArgs),
    /// Exact fidelity against the semiclassical approximants.
    CompareSc(RunArgs),
    /// Decay rate of the mean fidelity across a strength sweep.
    FgrScan(RunArgs),
    /// First-kick fidelity: packet short-time formula or point-source scan.
    ShortTime(RunArgs),
    /// Finite-time exponents, K(E) per family and C(l).
    Classical(RunArgs),
    /// Action-difference curves, variance growth and histogram.
    ActionStats(RunArgs),
    /// Stable-law and Gaussian fits to the action distribution.
    Levy(RunArgs),
    /// Perturbative border, breakdown times and tau scales.
    Regimes(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    format: Option<Format>,
    /// `key=value` overrides applied after the config file.
    overrides: Vec<String>,
}

impl Command {
    fn split(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Fidelity(a) => ("fidelity", a),
            Command::CompareSc(a) => ("compare-sc", a),
            Command::FgrScan(a) => ("fgr-scan", a),
            Command::ShortTime(a) => ("short-time", a),
            Command::Classical(a) => ("classical", a),
            Command::ActionStats(a) => ("action-stats", a),
            Command::Levy(a) => ("levy", a),
            Command::Regimes(a) => ("regimes", a),
        }
    }
}

fn load(args: &RunArgs) -> RunResult<RunConfig> {
    let mut cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    if let Some(format) = args.format {
        cfg.format = format;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> RunResult<()> {
    let (name, args) = cli.command.split();
    let cfg = load(args)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| RunError::Config(format!("cannot start {} worker threads: {e}", cfg.threads)))?;
    }
    let manifest = execute(name, &cfg)?;
    for f in &manifest.files {
        println!("{}", cfg.out.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
