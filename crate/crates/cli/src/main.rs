use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pmsm_iga::commands::{
    cmd_bench, cmd_export, cmd_optimize, cmd_solve, cmd_sweep, load_config, Report,
};
use pmsm_iga::config::RunConfig;
use pmsm_iga::Result;

/// Isogeometric PMSM solver and rotor shape optimizer.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coupled solve at one rotor angle: coefficients and a sampled field.
    Solve { config: PathBuf },
    /// Flux-linkage sweep over one electrical period, EMF spectrum and THD.
    Sweep { config: PathBuf },
    /// Rotor shape optimization of the EMF distortion.
    Optimize { config: PathBuf },
    /// Timing table over refinement levels and harmonic counts.
    Bench { config: PathBuf },
    /// Geometry dumps of the demo machine.
    Export { config: PathBuf },
}

fn run(cmd: &Command) -> Result<Report> {
    let (path, f): (&PathBuf, fn(&RunConfig) -> Result<Report>) = match cmd {
        Command::Solve { config } => (config, cmd_solve),
        Command::Sweep { config } => (config, cmd_sweep),
        Command::Optimize { config } => (config, cmd_optimize),
        Command::Bench { config } => (config, cmd_bench),
        Command::Export { config } => (config, cmd_export),
    };
    f(&load_config(path)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(rep) => {
            println!("{}", rep.summary);
            for p in &rep.files {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
