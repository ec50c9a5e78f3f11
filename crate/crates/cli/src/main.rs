use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod analyze;
mod compare;
mod fail;
mod model;
mod output;
mod predict;
mod simulate;

pub use fail::Failure;

/// Startup laboratory for threshold bipolar scheduling.
#[derive(Parser)]
#[command(name = "tblab", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a swarm simulation and write per-peer traces.
    Simulate(simulate::Args),
    /// Evaluate the progress model and write the predicted curves.
    Predict(predict::Args),
    /// Run the estimators over a batch of trace files.
    Analyze(analyze::Args),
    /// Residuals between a trace and the model's prediction.
    Compare(compare::Args),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TBLAB_LOG", "warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Simulate(a) => simulate::run(a),
        Command::Predict(a) => predict::run(a),
        Command::Analyze(a) => analyze::run(a),
        Command::Compare(a) => compare::run(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tblab: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
