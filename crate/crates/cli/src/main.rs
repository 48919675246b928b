//! `loadcast` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! Failures end with one line `loadcast: error[<kind>]: <message>` on stderr.

mod commands;
mod out;
mod plot;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "loadcast", version, about = "Short-term electricity load forecasting and demand-shift analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every command that writes files.
#[derive(Debug, Args)]
pub struct Common {
    /// Output directory; nothing is written outside it.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a half-hourly `load,temp` frame from a load file and weather stations.
    Ingest(IngestArgs),
    /// Build the design matrix from a frame, a calendar and mobility records.
    Features(FeaturesArgs),
    /// Fit a bank of 48 per-half-hour additive models.
    Fit(FitArgs),
    /// Forecast with a saved model.
    Predict(PredictArgs),
    /// Adapt a fitted bank online with a Kalman filter.
    Adapt(AdaptArgs),
    /// Combine expert forecasts with ML-Poly aggregation.
    Aggregate(AggregateArgs),
    /// Fit a random forest or boosted additive model.
    Ensemble(EnsembleArgs),
    /// Change points of seasonality-model residuals and the implied savings.
    Changepoint(ChangepointArgs),
    /// Rank regressors on daily data.
    Select(SelectArgs),
    /// Run the model benchmark described by a config file.
    Bench(BenchArgs),
    /// Generate a synthetic scenario with its ground truth.
    Synth(SynthArgs),
    /// Print the version.
    Version,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Frame CSV with a `load` column (timestamp,load).
    #[arg(long, requires = "stations", conflicts_with = "long")]
    pub load: Option<PathBuf>,
    /// Station CSV: station_id,lat,lon,timestamp,temp_c on a 3-hour grid.
    #[arg(long, requires = "load")]
    pub stations: Option<PathBuf>,
    /// Station weights CSV: station_id,weight (uniform when absent).
    #[arg(long, requires = "stations")]
    pub weights: Option<PathBuf>,
    /// Long plot CSV (series,timestamp,value) to pivot into a frame.
    #[arg(long, required_unless_present = "load")]
    pub long: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub frame: PathBuf,
    #[arg(long)]
    pub calendar: PathBuf,
    /// Mobility records: date,area_id,category,origin,count.
    #[arg(long)]
    pub mobility: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub design: PathBuf,
    /// `reference`, `seasonality` or a formula such as `load ~ s(temp, k=5)`.
    #[arg(long, default_value = "reference")]
    pub formula: String,
    /// Training window, `start..end` or a preset name.
    #[arg(long, default_value = "open-train")]
    pub train: String,
    /// Also run nested F tests of every term.
    #[arg(long)]
    pub f_tests: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub design: PathBuf,
    /// Restrict the output to this window.
    #[arg(long)]
    pub window: Option<String>,
    /// Plot the effect of the model term that uses this variable.
    #[arg(long)]
    pub effect: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    Static,
    Dynamic,
    Viking,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub common: Common,
    /// A saved GAM bank.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long, value_enum, default_value = "static")]
    pub method: Method,
    /// Window scored by the noise grid search.
    #[arg(long)]
    pub burn: Option<String>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Frame CSV holding the target and the expert forecasts.
    #[arg(long)]
    pub experts: PathBuf,
    #[arg(long, default_value = "load")]
    pub target: String,
    /// Expert columns (default: every column but the target).
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
    /// Bound on the loss gradient.
    #[arg(long, default_value_t = loadcast::aggregate::DEFAULT_BOUND)]
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EnsembleKind {
    Rf,
    #[value(alias = "rf_block")]
    RfBlock,
    Boosting,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long, value_enum, default_value = "rf")]
    pub kind: EnsembleKind,
    #[arg(long, default_value = "open-train")]
    pub train: String,
    /// Forest features (default: the benchmark feature set).
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    /// Boosting formula: `reference`, `seasonality` or formula text.
    #[arg(long, default_value = "reference")]
    pub formula: String,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ChangepointArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long, default_value = "seasonality-train")]
    pub train: String,
    #[arg(long, default_value = "residuals")]
    pub eval: String,
    /// Window whose savings are reported.
    #[arg(long, default_value = "sobriety")]
    pub savings: String,
    #[arg(long, default_value_t = 10)]
    pub max_cp: usize,
    #[arg(long)]
    pub formula: Option<String>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    #[arg(long, default_value = "load")]
    pub target: String,
    /// Features whose effect is removed from the target before a second ranking.
    #[arg(long, value_delimiter = ',', default_value = "temp")]
    pub correct: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "reference")]
    pub scenario: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let line = message.replace('\n', " ");
    eprintln!("loadcast: error[{kind}]: {}", line.trim());
    ExitCode::from(match kind {
        "usage" => 1,
        "numerical" => 3,
        _ => 2,
    })
}

pub fn dispatch<I: IntoIterator<Item = OsString>>(argv: I) -> ExitCode {
    let argv: Vec<OsString> = argv.into_iter().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            eprint!("{rendered}");
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            return fail("usage", first.trim_start_matches("error: "));
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::run(cli.command, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    dispatch(std::env::args_os())
}
