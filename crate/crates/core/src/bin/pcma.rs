use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pcma::config::{load_config, RunConfig, Task};
use pcma::tasks::{self, Outcome};
use pcma::Error;

#[derive(Parser)]
#[command(version, about = "Parabolic complex Monge-Ampère flows with singular initial data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized suites, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    Solve,
    TrackSingularity,
    Demailly,
    Verify,
    RescaleCompare,
    ManufacturedConvergence,
}

impl Command {
    fn task(self) -> Task {
        match self {
            Command::Solve => Task::Solve,
            Command::TrackSingularity => Task::Track,
            Command::Demailly => Task::Demailly,
            Command::Verify => Task::Verify,
            Command::RescaleCompare => Task::RescaleCompare,
            Command::ManufacturedConvergence => Task::ManufacturedConvergence,
        }
    }
}

fn is_usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::ConfigSyntax { .. }
            | Error::UnknownKey(_)
            | Error::Constraint(_)
            | Error::ExpressionSyntax { .. }
            | Error::InvalidArgument(_)
            | Error::InvalidDomain(_)
            | Error::ResolutionTooSmall(_)
            | Error::EvenResolution(_)
            | Error::StepTooLarge(_)
            | Error::AIsZero
    )
}

fn run(cli: &Cli) -> Result<Outcome, (u8, Error)> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p).map_err(|e| (1, e))?,
        None => RunConfig::new(cli.command.task()),
    };
    cfg.task = cli.command.task();
    if let Some(o) = &cli.out {
        cfg.out = o.display().to_string();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let result = match cfg.task {
        Task::Solve => tasks::solve(&cfg),
        Task::Track => tasks::track_singularity(&cfg),
        Task::Demailly => tasks::demailly(&cfg),
        Task::Verify => tasks::verify(&cfg),
        Task::RescaleCompare => tasks::rescale_compare(&cfg),
        Task::ManufacturedConvergence => tasks::manufactured_convergence(&cfg),
    };
    result.map_err(|e| (if is_usage_error(&e) { 1 } else { 2 }, e))
}

fn main() -> ExitCode {
    pcma::init_threads();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            if !cli.quiet {
                for line in &outcome.lines {
                    println!("{line}");
                }
            }
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err((code, e)) => {
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
