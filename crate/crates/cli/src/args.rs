use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mxql_core::mxql::{QMode, DEFAULT_OUTER_ITERATIONS, DEFAULT_TOLERANCE, DEFAULT_V_STEPS};
use mxql_core::regression::TargetDefinition;
use mxql_core::rng::DEFAULT_SEED;
use mxql_core::{Grid, LossVariant};

#[derive(Debug, Parser)]
#[command(
    name = "mxql",
    version,
    about = "Gumbel regression and expanded-loss value learning experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Loss values and gradients over a residual grid.
    LossCurve(LossCurveArgs),
    /// Normalized error densities implied by each loss.
    ErrDist(ErrDistArgs),
    /// Scalar regression over a grid of data and loss temperatures.
    Regress(RegressArgs),
    /// Tabular value learning on an MDP, compared against exact oracles.
    MdpTrain(MdpTrainArgs),
    /// Welch t-tests between two `regress` outputs, cell by cell.
    Compare(CompareArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::LossCurve(_) => "loss-curve",
            Command::ErrDist(_) => "err-dist",
            Command::Regress(_) => "regress",
            Command::MdpTrain(_) => "mdp-train",
            Command::Compare(_) => "compare",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Master seed.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Output CSV; a `.manifest` file is written next to it. Prints to stdout
    /// when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Key-value file of default flags (`beta = 2`); command-line flags win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LossParams {
    /// Loss temperature.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Expectile level.
    #[arg(long, default_value_t = 0.7)]
    pub tau: f64,
    /// Clamp on `residual / beta` for the clipped loss.
    #[arg(long, default_value_t = 7.0)]
    pub clip: f64,
}

#[derive(Debug, Clone, Args)]
pub struct LossCurveArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub params: LossParams,
    /// Loss families: gumbel, clipped, expanded, l2, expectile.
    #[arg(long, value_delimiter = ',', default_value = "expanded,gumbel")]
    pub loss: Vec<LossVariant>,
    /// Expansion orders (even, >= 2).
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    pub orders: Vec<u32>,
    /// Residual grid as start:stop:step.
    #[arg(long, default_value = "-3:3:0.01", allow_hyphen_values = true)]
    pub grid: Grid,
}

#[derive(Debug, Clone, Args)]
pub struct ErrDistArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub params: LossParams,
    #[arg(long, value_delimiter = ',', default_value = "expanded,gumbel")]
    pub loss: Vec<LossVariant>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,12,16")]
    pub orders: Vec<u32>,
    /// Residual grid; both ends must lie in the negligible tails.
    #[arg(long, default_value = "-30:30:0.01", allow_hyphen_values = true)]
    pub grid: Grid,
}

#[derive(Debug, Clone, Args)]
pub struct RegressArgs {
    #[command(flatten)]
    pub common: Common,
    /// Loss family; its temperature is set per cell.
    #[arg(long, default_value = "gumbel")]
    pub loss: LossVariant,
    /// Expansion order for `--loss expanded`.
    #[arg(long, default_value_t = 4)]
    pub order: u32,
    #[arg(long, default_value_t = 7.0)]
    pub clip: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.5,2,10")]
    pub betas_data: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,2,10")]
    pub betas_reg: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub repeats: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n_data: usize,
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, value_delimiter = ',', default_value = "10,100,500,1000,2000")]
    pub checkpoints: Vec<usize>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub initial_h: f64,
    /// minimizer or unscaled-logsum.
    #[arg(long, default_value = "minimizer")]
    pub target: TargetDefinition,
    /// Reuse one dataset for every repeat of a cell.
    #[arg(long)]
    pub shared_dataset: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMode {
    /// Closed form for order-2 losses, gradient descent otherwise.
    Auto,
    Closed,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Exhaustive,
    Rollout,
}

#[derive(Debug, Clone, Args)]
pub struct MdpTrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub params: LossParams,
    /// Built-in MDP: bandit, chain3 or risky5.
    #[arg(long, default_value = "chain3", conflicts_with = "mdp_file")]
    pub mdp: String,
    /// MDP definition file, instead of a built-in one.
    #[arg(long)]
    pub mdp_file: Option<PathBuf>,
    #[arg(long, default_value = "expanded")]
    pub loss: LossVariant,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,12,20")]
    pub orders: Vec<u32>,
    /// How V is fitted.
    #[arg(long, value_enum, default_value = "auto")]
    pub mode: FitMode,
    /// closed_form or gradient.
    #[arg(long, default_value = "closed_form")]
    pub q_mode: QMode,
    #[arg(long, value_enum, default_value = "exhaustive")]
    pub dataset: DatasetKind,
    /// Exhaustive dataset size; defaults to 100 per state.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0)]
    pub start_state: usize,
    /// V step size; defaults to 0.02 beta^2.
    #[arg(long)]
    pub lr_v: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    pub lr_q: f64,
    #[arg(long, default_value_t = DEFAULT_V_STEPS)]
    pub v_steps: usize,
    #[arg(long, default_value_t = DEFAULT_V_STEPS)]
    pub q_steps: usize,
    #[arg(long, default_value_t = DEFAULT_OUTER_ITERATIONS)]
    pub iterations: usize,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Per-iteration trace CSV.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Final Q tables CSV.
    #[arg(long)]
    pub tables_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// First `regress` CSV.
    pub a: PathBuf,
    /// Second `regress` CSV.
    pub b: PathBuf,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}
