mod config;
mod failure;
mod plot;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Settings;
use crate::failure::Outcome;
use crate::stages::{Ctx, Layout};

/// Synthetic S-N curves and transfer-learned LSTM forecasts of their
/// high-cycle tail.
#[derive(Debug, Parser)]
#[command(name = "sn-forecast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration file (built-in defaults when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory that receives every artifact.
    #[arg(long, global = true, env = "SN_FORECAST_OUT", default_value = "sn-forecast-out")]
    out: PathBuf,

    /// Overrides the training seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Progress messages on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the axial and torsional datasets.
    Generate,
    /// Train the source LSTM on the axial training region.
    TrainSource,
    /// Copy and freeze the source LSTM, then train a new head on torsional data.
    Transfer,
    /// Train an LSTM from scratch on the torsional training region.
    TrainBaseline,
    /// Train the feed-forward baseline on each dataset.
    TrainDnn,
    /// Write test-region prediction CSVs for every trained model.
    Forecast,
    /// Compute train and test RMSE of every model and write the report.
    Evaluate,
    /// Render loss and S-N figures (SVG) from the CSV artifacts.
    Plot,
    /// Every stage above, in order.
    RunAll,
}

fn run(cli: Cli) -> Outcome<()> {
    let settings = Settings::load(cli.config.as_deref(), cli.seed)?;
    let ctx = Ctx {
        settings,
        layout: Layout::new(cli.out)?,
        verbose: cli.verbose,
    };
    match cli.command {
        Command::Generate => stages::generate(&ctx),
        Command::TrainSource => stages::train_source(&ctx),
        Command::Transfer => stages::transfer(&ctx),
        Command::TrainBaseline => stages::train_baseline(&ctx),
        Command::TrainDnn => stages::train_dnn(&ctx),
        Command::Forecast => stages::forecast(&ctx),
        Command::Evaluate => stages::evaluate(&ctx),
        Command::Plot => stages::plot(&ctx),
        Command::RunAll => stages::run_all(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            failure.exit_code()
        }
    }
}
