mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use commands::RunContext;
use config::RunConfig;
use manifest::OutputDir;

#[derive(Parser, Debug)]
#[command(
    name = "fpreduce",
    version,
    about = "Reduced Fokker-Planck analysis of a two-population decision model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file, JSON or `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override one config key, e.g. `--set beta=0.2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Fixed points and spectrum along w_plus.
    Bifurcate,
    /// Slow manifold, potential and barrier sweep.
    Reduce,
    /// Stationary reduced densities and their rate marginals.
    Steady,
    /// Time-dependent reduced equation.
    Evolve1d,
    /// Full 2D equation and comparison with the reduced one.
    Evolve2d,
    /// Monte Carlo ensemble of the Langevin system.
    Sde,
    /// Escape times between the decision states.
    Escape,
    /// Long-time fraction of correct decisions.
    Perf,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Bifurcate => "bifurcate",
            Command::Reduce => "reduce",
            Command::Steady => "steady",
            Command::Evolve1d => "evolve1d",
            Command::Evolve2d => "evolve2d",
            Command::Sde => "sde",
            Command::Escape => "escape",
            Command::Perf => "perf",
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use fpreduce::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<E>()) {
        Some(E::Config(_) | E::UnknownKey(_) | E::InvalidParams(_) | E::DegenerateParameter(_)) => 2,
        Some(_) => 3,
        None => 1,
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;

    let mut out = OutputDir::create(&cli.out)?;
    let ctx = RunContext {
        cfg: &cfg,
        seed: cli.seed,
    };
    match cli.command {
        Command::Bifurcate => commands::bifurcate(&ctx, &mut out)?,
        Command::Reduce => commands::reduce(&ctx, &mut out)?,
        Command::Steady => commands::steady(&ctx, &mut out)?,
        Command::Evolve1d => commands::evolve1d(&ctx, &mut out)?,
        Command::Evolve2d => commands::evolve2d(&ctx, &mut out)?,
        Command::Sde => commands::sde(&ctx, &mut out)?,
        Command::Escape => commands::escape(&ctx, &mut out)?,
        Command::Perf => commands::perf(&ctx, &mut out)?,
    }
    let root = out.root().to_path_buf();
    out.finish(cli.command.name(), cli.seed, cfg.to_json())?;
    log::info!("results in {}", root.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
