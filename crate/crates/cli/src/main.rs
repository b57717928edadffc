mod analyze;
mod config;
mod generate;
mod output;
mod resonator;
mod simulate;
mod table1;

use clap::{Parser, Subcommand};
use config::{ConfigFile, Failure, Layered};
use output::{Format, Output};
use std::path::PathBuf;
use std::process::ExitCode;

/// Layouts, pseudopotential analysis, addressing sweeps, trajectories and
/// drive electronics for planar RF trap arrays.
///
/// Exit codes: 0 success, 2 parse error, 3 invalid parameter, 4 physics
/// failure (no minima, escaped particle, unlocked loop), 5 I/O error.
#[derive(Debug, Parser)]
#[command(name = "addrtrap", version)]
struct Cli {
    /// JSON config with one section per command; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for sampled starting points.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a layout JSON.
    Generate(generate::GenerateArgs),
    /// Find trap sites and write pseudopotential slices.
    Analyze(analyze::TrapArgs),
    /// Ramp an addressable electrode and follow the bordering sites.
    Sweep(analyze::SweepArgs),
    /// Integrate a particle trajectory.
    Simulate(simulate::SimulateArgs),
    /// Tank resonator, coupling and phase-lock studies.
    #[command(subcommand)]
    Resonator(resonator::ResonatorCommand),
    /// Gate-time table.
    Table1(table1::Table1Args),
}

struct Context {
    out: Output,
    seed: u64,
}

fn run(cli: Cli) -> config::CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return config::invalid("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Invalid(e.to_string()))?;
    }
    let file = ConfigFile::load(cli.config.as_deref())?;
    let ctx = Context { out: Output::new(&cli.out, cli.format)?, seed: cli.seed };
    match cli.command {
        Command::Generate(a) => generate::run(&ctx, a.layer(file.section("generate")?)),
        Command::Analyze(a) => analyze::run_analyze(&ctx, a.layer(file.section("analyze")?)),
        Command::Sweep(a) => analyze::run_sweep(&ctx, a.layer(file.section("sweep")?)),
        Command::Simulate(a) => simulate::run(&ctx, a.layer(file.section("simulate")?)),
        Command::Resonator(c) => resonator::run(&ctx, c, &file),
        Command::Table1(a) => table1::run(&ctx, a.layer(file.section("table1")?)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code() as u8)
        }
    }
}
