use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use robreg_core::{AicForm, CpVariant, Criterion, PenaltyFamily};

#[derive(Debug, Parser)]
#[command(name = "robreg", version, about = "Robust penalized linear regression by minimum density power divergence")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON output path (stdout if omitted). CSV tables are written next to it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed for `simulate`; other subcommands are deterministic and ignore it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for `simulate` (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Name of the response column in the input CSV.
    #[arg(long, global = true)]
    pub response: Option<String>,
    /// Input CSV with a header row.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the penalized estimator at one (alpha, lambda).
    Fit(FitArgs),
    /// Choose lambda (and optionally alpha) by a selection criterion.
    Select(SelectArgs),
    /// Influence function of a fitted model over a grid of probe offsets.
    Influence(InfluenceArgs),
    /// Monte-Carlo study of prediction error and support recovery.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum InitArg {
    Ols,
    Huber,
}

#[derive(Debug, Clone, Args)]
pub struct PenaltyArgs {
    #[arg(long, default_value = "l1")]
    pub penalty: PenaltyFamily,
    /// Penalty level on the standardized scale.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = robreg_core::penalty::DEFAULT_SCAD_A)]
    pub scad_a: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "huber")]
    pub init: InitArg,
    /// Fit on the raw data instead of the robustly standardized data.
    #[arg(long)]
    pub no_standardize: bool,
}

/// `--alpha` for `select`: a number in [0, 1] or `adaptive`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaChoice {
    Fixed(f64),
    Adaptive,
}

impl std::str::FromStr for AlphaChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("adaptive") {
            return Ok(AlphaChoice::Adaptive);
        }
        s.parse::<f64>()
            .map(AlphaChoice::Fixed)
            .map_err(|_| format!("expected a number or `adaptive`, got `{s}`"))
    }
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long, default_value = "rcp")]
    pub criterion: Criterion,
    #[arg(long, default_value = "0.2")]
    pub alpha: AlphaChoice,
    #[arg(long, default_value_t = 50)]
    pub grid_size: usize,
    #[arg(long, default_value = "squared")]
    pub rcp_variant: CpVariant,
    #[arg(long, default_value = "derivation")]
    pub aic_form: AicForm,
    /// Penalty family of the lambda path (l1 or scad).
    #[arg(long, default_value = "l1")]
    pub penalty: PenaltyFamily,
    #[arg(long, default_value_t = robreg_core::penalty::DEFAULT_SCAD_A)]
    pub scad_a: f64,
    /// Alpha grid step for `--alpha adaptive`.
    #[arg(long, default_value_t = 0.0125)]
    pub alpha_step: f64,
}

#[derive(Debug, Args)]
pub struct InfluenceArgs {
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    pub probe_min: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub probe_max: f64,
    #[arg(long, default_value_t = 201)]
    pub probe_steps: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON study configuration; replaces the individual study flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run the four clean and contaminated panels over `--sizes`.
    #[arg(long)]
    pub figure1: bool,
    #[arg(long, value_delimiter = ',', default_value = "50,100,200")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 25)]
    pub p: usize,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.6)]
    pub sparsity: f64,
    #[arg(long, default_value_t = 1.0)]
    pub snr: f64,
    /// Contaminated fraction of training responses.
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    /// Outlier location in units of the error standard deviation.
    #[arg(long, default_value_t = 10.0)]
    pub mu_c: f64,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1000)]
    pub test_size: usize,
    /// Comma-separated, e.g. `OLS,Huber,RCp(0.2)`.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<robreg_core::simulation::Estimator>>,
    #[arg(long, default_value_t = 50)]
    pub grid_size: usize,
    #[arg(long, default_value = "squared")]
    pub rcp_variant: CpVariant,
}
