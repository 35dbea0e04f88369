//! Command-line front end for gscan: `detect`, `simulate`, `fit` and `evaluate`.
//!
//! Every option can also come from a TOML file given with `--config`; keys are
//! the long flag names (`-` or `_`), and flags override the file.

pub mod commands;
mod config;
mod geojson;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use config::load_config;

#[derive(Debug, Parser)]
#[command(name = "gscan", version, about = "Spatio-temporal cluster detection and risk estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect clusters with the greedy scan or the cylindrical baseline.
    Detect(DetectCmd),
    /// Simulate datasets with planted clusters.
    Simulate(SimulateCmd),
    /// Fit the risk model with or without cluster terms.
    Fit(FitCmd),
    /// Score detection and estimation outputs against simulation truth.
    Evaluate(EvaluateCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Long,
    Wide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gscanstat,
    Cylinder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionsArg {
    Both,
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// The 10×10 analog with a dominant central area and a snake on the ring around it.
    Ring,
    /// A rectangular grid with the staircase snake and corner block.
    Grid,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct CommonArgs {
    /// TOML file with default option values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Counts CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Layout of the counts CSV.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// File listing area ids, one per line, fixing the area order.
    #[arg(long)]
    pub area_order: Option<PathBuf>,
    /// Adjacency CSV, one `area,area` edge per row.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Centroid CSV `area_id,x,y` in projected coordinates.
    #[arg(long)]
    pub centroids: Option<PathBuf>,
    /// GeoJSON of area polygons; outputs are also written as GeoJSON.
    #[arg(long)]
    pub geojson: Option<PathBuf>,
    /// Feature property holding the area id.
    #[arg(long)]
    pub geojson_id: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 or unset uses all cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectArgs {
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Nearest areas in the limiting window.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Period half-width of the limiting window.
    #[arg(long)]
    pub tstar: Option<usize>,
    /// Monte Carlo replicates.
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub directions: Option<DirectionsArg>,
    /// Cylinder bases: largest share of the total expected count.
    #[arg(long)]
    pub max_spatial_fraction: Option<f64>,
    /// Cylinder heights: largest share of the study period.
    #[arg(long)]
    pub max_temporal_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    /// A, B or C.
    #[arg(long)]
    pub scenario: Option<String>,
    /// 1H, 1L, 1H1L or none.
    #[arg(long)]
    pub subscenario: Option<String>,
    /// Number of datasets.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    pub layout: Option<Layout>,
    /// Grid size `NXxNY` for the grid layout.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub periods: Option<usize>,
    /// Expected count per cell for the grid layout when no --data is given.
    #[arg(long)]
    pub expected: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct FitArgs {
    /// Interaction type, 1 to 4.
    #[arg(long)]
    pub interaction: Option<String>,
    /// Cluster report from `detect`; without it the plain model is fitted.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Posterior draws.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Fixed hyperparameters `log τξ,logit λ,log τγ,log τδ`; skips their estimation.
    #[arg(long)]
    pub hyper: Option<String>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateArgs {
    /// Directory holding one subdirectory per simulated dataset.
    #[arg(long)]
    pub sims: Option<PathBuf>,
    /// Method subdirectories to score, comma separated.
    #[arg(long)]
    pub methods: Option<String>,
    /// Scenario label for the table rows.
    #[arg(long)]
    pub scenario: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct DetectCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub args: DetectArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub args: SimulateArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FitCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub args: FitArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateCmd {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub args: EvaluateArgs,
}

/// Field-wise `flag.or(file)`, plus the list of accepted config keys.
macro_rules! mergeable {
    ($t:ty; $($f:ident),* $(,)?) => {
        impl config::Merge for $t {
            const KEYS: &'static [&'static str] = &[$(stringify!($f)),*];
            fn merge(self, file: Self) -> Self {
                Self { $($f: self.$f.or(file.$f)),* }
            }
        }
    };
}

mergeable!(CommonArgs; config, data, format, area_order, graph, centroids, geojson, geojson_id, seed, workers, out);
mergeable!(DetectArgs; method, k, tstar, replicates, alpha, directions, max_spatial_fraction, max_temporal_fraction);
mergeable!(SimulateArgs; scenario, subscenario, n, layout, grid, periods, expected);
mergeable!(FitArgs; interaction, clusters, samples, hyper, restarts);
mergeable!(EvaluateArgs; sims, methods, scenario);

/// A failure with its process exit code.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    /// Bad paths, configuration or input data.
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    /// Numerical or convergence failure.
    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<gscan::Error> for CliError {
    fn from(e: gscan::Error) -> Self {
        if e.is_numerical() {
            Self::numerical(e.to_string())
        } else {
            Self::input(e.to_string())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Detect(c) => {
            let (common, args) = config::resolve(c.common, c.args)?;
            commands::detect::run(&common, &args)
        }
        Command::Simulate(c) => {
            let (common, args) = config::resolve(c.common, c.args)?;
            commands::simulate::run(&common, &args)
        }
        Command::Fit(c) => {
            let (common, args) = config::resolve(c.common, c.args)?;
            commands::fit::run(&common, &args)
        }
        Command::Evaluate(c) => {
            let (common, args) = config::resolve(c.common, c.args)?;
            commands::evaluate::run(&common, &args)
        }
    }
}

/// Parses `args` (program name first), runs, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_errors_exit_three() {
        let e: CliError = gscan::Error::NoConvergence { iterations: 100, detail: "x".into() }.into();
        assert_eq!(e.code, 3);
        let e: CliError = gscan::Error::UnknownArea("a".into()).into();
        assert_eq!(e.code, 2);
    }
}
