//! `trefftz`: configuration-driven runs of the space-time Trefftz DG solver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CheckFamily, RunContext};

#[derive(Parser)]
#[command(name = "trefftz", version, about = "Space-time Trefftz DG solver for the acoustic wave equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (overrides `output.directory`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for plane-wave direction sets in three dimensions.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and write the solution, samples and energy audit.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the mesh levels of `study` and fit convergence rates.
    Converge {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build and validate the mesh only.
    Mesh {
        #[arg(long)]
        config: PathBuf,
    },
    /// Report dimensions, Trefftz residuals and conditioning of a basis family.
    CheckBasis {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, ignore_case = true)]
        family: CheckFamily,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("error: cannot start the worker pool: {e}");
        return ExitCode::from(1);
    }
    let explicit = cli.out.is_some();
    let ctx = RunContext {
        out: cli.out.unwrap_or_else(|| PathBuf::from("out")),
        threads,
        seed: cli.seed,
    };
    let result = match cli.command {
        Command::Solve { config } => commands::solve(&config, ctx, explicit),
        Command::Converge { config } => commands::converge(&config, ctx, explicit),
        Command::Mesh { config } => commands::mesh(&config, ctx, explicit),
        Command::CheckBasis { p, n, family } => commands::check_basis(p, n, family, ctx),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
