//! `so3bgk`: equilibria, relaxation, particle runs and coefficients.

mod commands;
mod input;
mod settings;
mod verify;

use clap::{Parser, Subcommand};
use settings::{Common, Settings};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "so3bgk", version, about = "Body-attitude alignment BGK model on SO(3)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Branch table over a density range and the critical densities.
    PhaseDiagram {
        #[command(flatten)]
        common: Common,
    },
    /// Relax a flux matrix along the mean-field gradient flow.
    Relax {
        /// File with a 3×3 matrix (three rows of three numbers).
        #[arg(long, conflicts_with = "random")]
        input: Option<std::path::PathBuf>,
        /// Draw J0 with independent N(0, 1) entries from the seed.
        #[arg(long)]
        random: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Exact particle simulation compared with its mean-field ODE.
    Simulate {
        /// Number of particles.
        #[arg(long)]
        n: Option<usize>,
        /// Strength of the alignment kernel.
        #[arg(long)]
        rho_eff: Option<f64>,
        /// Final time.
        #[arg(long)]
        time: Option<f64>,
        /// Checkpoint spacing.
        #[arg(long)]
        checkpoint_dt: Option<f64>,
        /// Independent replicas used to calibrate the band.
        #[arg(long)]
        replicas: Option<u64>,
        /// Initial law M_{κ I}; 0 draws uniformly.
        #[arg(long)]
        init_kappa: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Macroscopic coefficient table.
    Coeffs {
        #[command(flatten)]
        common: Common,
    },
    /// Run a property suite and print a pass/fail table.
    Verify {
        /// Suite name, or `all`.
        suite: String,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let args: Vec<String> = std::env::args().skip(1).collect();
    let result = match cli.command {
        Command::PhaseDiagram { common } => {
            Settings::resolve(&common).and_then(|s| commands::phase_diagram(&s, args))
        }
        Command::Relax { input, random, common } => {
            Settings::resolve(&common).and_then(|s| commands::relax(&s, input.as_deref(), random, args))
        }
        Command::Simulate {
            n,
            rho_eff,
            time,
            checkpoint_dt,
            replicas,
            init_kappa,
            common,
        } => Settings::resolve(&common).and_then(|s| {
            let p = commands::SimParams::resolve(&s, n, rho_eff, time, checkpoint_dt, replicas, init_kappa)?;
            commands::simulate(&s, &p, args)
        }),
        Command::Coeffs { common } => Settings::resolve(&common).and_then(|s| commands::coeffs(&s, args)),
        Command::Verify { suite, common } => match Settings::resolve(&common).and_then(|s| verify::run(&suite, &s)) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(2),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
