mod bench;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rangesep::{Error, ErrorKind};

use bench::BenchCommand;
use commands::{DeltaArgs, EnergyArgs, ForcesArgs, KernelArgs, LatticeArgs, ParticlesArgs};
use config::{load_config, Overrides, RunConfig};

/// Range-separated tensor electrostatics on Cartesian grids.
#[derive(Parser, Debug)]
#[command(name = "rangesep", version)]
struct Cli {
    /// `key=value` settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Grid cells per axis.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Half-width of the computational box.
    #[arg(long, global = true)]
    b: Option<f64>,
    /// `newton`, `yukawa:<kappa>` or `slater:<lambda>`.
    #[arg(long, global = true)]
    kernel: Option<String>,
    /// Target tolerance for quadrature and compression.
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Canonical representation of a single kernel.
    Kernel(KernelArgs),
    /// Collective potential and energy of a lattice.
    Lattice(LatticeArgs),
    /// Generate or validate a particle file.
    Particles(ParticlesArgs),
    /// Interaction energy of a particle system from its long-range part.
    Energy(EnergyArgs),
    /// Forces on each particle.
    Forces(ForcesArgs),
    /// Discretized Dirac delta and the regularized right-hand side.
    Delta(DeltaArgs),
    /// Scaling benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
}

fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let file = match &cli.config {
        Some(p) => load_config(p)?,
        None => Overrides::default(),
    };
    let overrides = Overrides {
        n: cli.n,
        b: cli.b,
        kernel: cli.kernel.clone(),
        eps: cli.eps,
        seed: cli.seed,
        threads: cli.threads,
        out: cli.out.clone(),
    };
    let cfg = RunConfig::resolve(&overrides, &file)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .context("configuring the thread pool")?;
    commands::ensure_dir(&cfg.out)?;
    commands::echo(&cfg, argv)?;
    match &cli.command {
        Command::Kernel(a) => commands::kernel(&cfg, a),
        Command::Lattice(a) => commands::lattice(&cfg, a),
        Command::Particles(a) => commands::particles(&cfg, a),
        Command::Energy(a) => commands::energy(&cfg, a),
        Command::Forces(a) => commands::forces(&cfg, a),
        Command::Delta(a) => commands::delta(&cfg, a),
        Command::Bench(b) => {
            let (report, name) = match b {
                BenchCommand::Kernel(a) => (bench::bench_kernel(&cfg, a)?, "bench_kernel.csv"),
                BenchCommand::Lattice(a) => (bench::bench_lattice(&cfg, a)?, "bench_lattice.csv"),
            };
            print!("{}", report.to_table());
            let path = cfg.out.join(name);
            std::fs::write(&path, report.to_csv())
                .map_err(Error::from)
                .with_context(|| format!("writing {}", path.display()))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::kind);
    match kind {
        Some(ErrorKind::Numerical) => 2,
        Some(ErrorKind::Resource) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
