mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "hrnn", version, about = "Hierarchical recurrent forecasting of index panels")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Panel CSV: node_id,node_name,level,parent_id,month,index_value
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Unemployment CSV: month,unemployment_rate
    #[arg(long, global = true)]
    exog: Option<PathBuf>,
    /// Run configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Share of each node's rates used for training
    #[arg(long = "train-frac", global = true)]
    train_frac: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a panel and summarise it
    Ingest,
    /// Descriptive statistics of the log-change rates
    Stats {
        /// Tree level, or `all` for one row per level plus a total
        #[arg(long, default_value = "all")]
        level: String,
    },
    /// Fit every configured model and save it under <out>/models
    Train,
    /// Forecast the test period and write relative-RMSE reports
    Evaluate {
        /// Model files; defaults to the configured models under <out>/models
        #[arg(long, num_args = 1..)]
        models: Vec<PathBuf>,
    },
    /// Compare a model fitted once against one refitted every quarter
    RetrainEval,
    /// Actual against predicted rates of one node, from a forecasts CSV
    PlotData {
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long)]
        node: u32,
        #[arg(long, default_value_t = 0)]
        horizon: usize,
        /// Restrict to one model name
        #[arg(long)]
        model: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let over = Overrides {
        data: cli.global.data,
        exog: cli.global.exog,
        out: cli.global.out,
        seed: cli.global.seed,
        train_frac: cli.global.train_frac,
    };
    let cfg = RunConfig::load(cli.global.config.as_deref(), over)?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Stats { level } => commands::stats(&cfg, &level),
        Command::Train => commands::train(&cfg),
        Command::Evaluate { models } => commands::evaluate(&cfg, &models),
        Command::RetrainEval => commands::retrain_eval(&cfg),
        Command::PlotData {
            forecasts,
            node,
            horizon,
            model,
        } => commands::plot_data(&cfg, &forecasts, node, horizon, model.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(1),
    }
}
