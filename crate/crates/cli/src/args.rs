use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairsvi::models::ModelKind;

/// Fair stochastic variational inference for discrete latent variable
/// models.
#[derive(Parser, Debug)]
#[command(name = "fairsvi", version, about)]
pub struct Cli {
    /// Output directory [default: config `output_dir`, else $FAIRSVI_OUTPUT_DIR, else ./fairsvi-out]
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model; writes checkpoint, per-epoch trace and dev report
    Train(TrainArgs),
    /// Vanilla grid, λ-only fair grid and slack-tolerance selection
    Grid(GridArgs),
    /// Fairness audit of a checkpoint on data, or of an assignments file
    Audit(AuditArgs),
    /// Full metric report of a checkpoint on a data file
    Evaluate(EvaluateArgs),
    /// Generate a synthetic dataset with schema and ground truth
    Synth(SynthArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
#[value(rename_all = "lowercase")]
pub enum KindArg {
    Nb,
    Gmm,
    Sp,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Nb => ModelKind::Nb,
            KindArg::Gmm => ModelKind::Gmm,
            KindArg::Sp => ModelKind::Sp,
        }
    }
}

/// Values that replace the config file's settings when given.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// Model family [config default: nb]
    #[arg(long, value_enum)]
    pub model: Option<KindArg>,
    /// Number of latent classes [config default: 3]
    #[arg(long)]
    pub k: Option<usize>,
    /// Dataset CSV
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Schema TOML
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Training epochs [config default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [config default: 128]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam step size [config default: 0.002]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Fairness weight λ; 0 trains the vanilla model [config default: 0]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Fairness target ε₀ [config default: 0]
    #[arg(long)]
    pub epsilon0: Option<f64>,
    /// Random seed [config default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable the SP warm start [config default: enabled]
    #[arg(long)]
    pub no_warm_start: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run configuration TOML
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Run configuration TOML
    #[arg(long)]
    pub config: PathBuf,
    /// Grid TOML; replaces the config's `[grid]` section [default: built-in grid]
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Concurrent trials, 0 for all cores [config default: 0]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Allowed relative dev-LL degradation of the fair model [config default: 0.02]
    #[arg(long)]
    pub slack: Option<f64>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    /// Checkpoint whose hard assignments are audited (needs --data)
    #[arg(long, conflicts_with = "assignments", requires = "data")]
    pub checkpoint: Option<PathBuf>,
    /// Data CSV to assign with the checkpoint
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// CSV with a `z` column plus one column per protected attribute
    #[arg(long, requires = "protected")]
    pub assignments: Option<PathBuf>,
    /// Protected attribute columns of the assignments file
    #[arg(long, value_delimiter = ',')]
    pub protected: Vec<String>,
    /// Number of latent classes [default: checkpoint K, else largest z + 1]
    #[arg(long)]
    pub classes: Option<usize>,
    /// ε-DF smoothing α
    #[arg(long, default_value_t = fairsvi::fairness::DEFAULT_AUDIT_ALPHA)]
    pub alpha: f64,
    /// Also write the checkpoint's assignments in the assignments format
    #[arg(long, requires = "checkpoint")]
    pub export_assignments: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Data CSV (encoded with the checkpoint's fitted encoder)
    #[arg(long)]
    pub data: PathBuf,
    /// Split name recorded in the report
    #[arg(long, default_value = "test")]
    pub split_name: String,
    /// Model id recorded in the report [default: checkpoint file stem]
    #[arg(long)]
    pub model_id: Option<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Generator family
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Rows to generate
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Latent classes (nb, gmm)
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Opposite prior tilt of the two protected groups (nb, gmm); for k = 2 the generating ε-DF equals the skew
    #[arg(long, default_value_t = 0.0)]
    pub skew: f64,
    /// Categorical attributes (nb)
    #[arg(long, default_value_t = 8)]
    pub attributes: usize,
    /// Categories per attribute (nb)
    #[arg(long, default_value_t = 4)]
    pub categories: usize,
    /// Dimensions (gmm)
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
    /// Distance between class means in noise s.d. units (gmm)
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
}
