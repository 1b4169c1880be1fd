//! Command-line front end: evolves adversarial prompt attachments against
//! a victim code model, benchmarks datasets, scans code for planted
//! vulnerabilities, and serves the bundled toy model over the wire
//! protocol.

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deceptforge_core::{EvolveError, ModelError, OracleError};

mod backend;
mod commands;
mod config;
mod svg;

#[derive(Debug, Parser)]
#[command(name = "deceptforge", version, about = "Evolve benign-looking prompt attachments that steer a code model into a targeted vulnerability, then measure the damage")]
struct Cli {
    /// Emit machine-readable JSON instead of human-readable text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evolve a prompt attachment against one case until its detector fires.
    Attack(commands::AttackArgs),
    /// Benchmark a dataset: vanilla baseline, attack, attacked re-evaluation.
    Eval(commands::EvalArgs),
    /// Scan a code file with one detector from a pattern library.
    Detect(commands::DetectArgs),
    /// Serve a toy model spec over the scoring and generation protocol.
    ToyServe(commands::ToyServeArgs),
}

async fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Attack(args) => commands::attack(args, cli.json).await,
        Command::Eval(args) => commands::eval(args, cli.json).await,
        Command::Detect(args) => commands::detect(args, cli.json),
        Command::ToyServe(args) => commands::toy_serve(args, cli.json).await,
    }
}

/// 1 for validation problems, 2 when a backend or oracle was unreachable.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if matches!(cause.downcast_ref::<ModelError>(), Some(ModelError::Transport(_))) {
            return 2;
        }
        if matches!(cause.downcast_ref::<OracleError>(), Some(OracleError::Transport(_))) {
            return 2;
        }
        if let Some(EvolveError::Aborted { message, .. }) = cause.downcast_ref::<EvolveError>() {
            if message.contains("unreachable") {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.exit_code() == 0 { 0 } else { 1 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(err) => {
            eprintln!("error: failed to start runtime: {err}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
