//! `flowcert`: rate sweeps, certificate checks, worst-case instances,
//! simulations and bound tables.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Outcome;

/// Exit status when a certification fails outright.
const EXIT_INFEASIBLE: u8 = 3;
/// Exit status when a check lands between the feasibility and marginal tolerances.
const EXIT_MARGINAL: u8 = 4;
const EXIT_IO: u8 = 5;
const EXIT_OTHER: u8 = 1;

#[derive(Parser)]
#[command(name = "flowcert", version, about = "Lyapunov certificates for optimization flows")]
struct Cli {
    /// TOML file with one table per subcommand; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bisect the certified rate over a grid of mu.
    Rate(commands::RateFlags),
    /// Lyapunov parameters of the relaxed oscillator search at 4/3 sqrt(mu).
    Lyapunov(commands::LyapunovFlags),
    /// Check a certificate file, on a time grid when it is time dependent.
    Verify(commands::VerifyFlags),
    /// Write one of the closed-form certificates.
    Reference(commands::ReferenceFlags),
    /// Worst-case function of the gradient flow, sampled along a line.
    Worstcase(commands::WorstcaseFlags),
    /// Integrate a flow or simulate an SDE ensemble on a quadratic.
    Simulate(commands::SimulateFlags),
    /// Tabulate a closed-form SDE bound.
    Bounds(commands::BoundsFlags),
    /// Test whether a family only admits the zero Lyapunov function.
    TrivialCheck(commands::TrivialFlags),
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let file = cli.config.as_deref().map(config::load).transpose()?;
    let file = file.as_ref();
    match &cli.command {
        Command::Rate(f) => commands::rate(f, file),
        Command::Lyapunov(f) => commands::lyapunov(f, file),
        Command::Verify(f) => commands::verify(f, file),
        Command::Reference(f) => commands::reference(f, file),
        Command::Worstcase(f) => commands::worstcase(f, file),
        Command::Simulate(f) => commands::simulate(f, file),
        Command::Bounds(f) => commands::bounds(f, file),
        Command::TrivialCheck(f) => commands::trivial_check(f, file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Marginal) => ExitCode::from(EXIT_MARGINAL),
        Ok(Outcome::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if commands::is_io_error(&e) { EXIT_IO } else { EXIT_OTHER })
        }
    }
}
