use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use raml_core::harness::{
    cmd_edit_hist, cmd_payoff, cmd_train, cmd_verify, ConfigFile, EditHistArgs, HarnessError, Outcome, PayoffArgs,
    TrainArgs, VerifyArgs,
};

#[derive(Parser)]
#[command(name = "raml-lab", version, about = "Payoff distributions, edit sampling and RAML training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run verification suites and write a plain-text report.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        args: VerifyArgs,
    },
    /// Write the edit-distance distribution as CSV.
    EditHist {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        args: EditHistArgs,
    },
    /// Train toy models over a temperature and seed sweep, writing JSONL.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Write the exact payoff distribution as CSV.
    Payoff {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        args: PayoffArgs,
    },
}

fn load(config: Option<PathBuf>) -> Result<ConfigFile, HarnessError> {
    config.map(|p| ConfigFile::load(&p)).transpose().map(Option::unwrap_or_default)
}

fn run(cli: Cli) -> Result<Outcome, HarnessError> {
    match cli.command {
        Command::Verify { config, args } => {
            let file = load(config)?.verify.unwrap_or_default();
            cmd_verify(&args.merge(file).resolve()?)
        }
        Command::EditHist { config, args } => {
            let file = load(config)?.edit_hist.unwrap_or_default();
            cmd_edit_hist(&args.merge(file).resolve()?)
        }
        Command::Train { config, args } => {
            let file = load(config)?.train.unwrap_or_default();
            cmd_train(&args.merge(file).resolve()?)
        }
        Command::Payoff { config, args } => {
            let file = load(config)?.payoff.unwrap_or_default();
            cmd_payoff(&args.merge(file).resolve()?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failure(msg)) => {
            eprintln!("raml-lab: {msg}");
            ExitCode::from(1)
        }
        Err(err) => {
            let code = err.exit_code() as u8;
            eprintln!("raml-lab: {:#}", anyhow::Error::new(err).context("command failed"));
            ExitCode::from(code)
        }
    }
}
