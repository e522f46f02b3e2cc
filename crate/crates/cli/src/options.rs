use std::path::PathBuf;

use clap::{Args, ValueEnum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GuidanceArg {
    Dps,
    Pigdm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RegArg {
    L1,
    L2,
    Pnp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Em,
    Fastem,
}

/// `r_t` rule for ΠGDM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RRuleArg {
    /// Matched to the Gaussian prior's pixel variance.
    Prior,
    /// `r_t^2 = 1 - abar_t`.
    Ratio,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Prior spec file (TOML); default is a power-law Gaussian fitted to y.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = GuidanceArg::Pigdm)]
    pub guidance: GuidanceArg,
    /// Multiplier on the DPS gradient.
    #[arg(long, default_value_t = 1.0)]
    pub dps_weight: f64,
    #[arg(long = "T", default_value_t = 100)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = RRuleArg::Prior)]
    pub r_rule: RRuleArg,
}

#[derive(Args, Debug, Clone)]
pub struct RegArgs {
    #[arg(long, value_enum, default_value_t = RegArg::L2)]
    pub reg: RegArg,
    /// Denoiser weights (DNW1), required for pnp.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e5)]
    pub beta: f64,
    /// HQS iterations per M-step.
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long)]
    pub kernel: PathBuf,
    #[arg(long)]
    pub sigma: String,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[arg(long)]
    pub y: PathBuf,
    /// Comma-separated sharp images.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sharp: Vec<PathBuf>,
    #[arg(long)]
    pub sigma: String,
    #[arg(long, default_value_t = 11)]
    pub ksize: usize,
    #[arg(long, default_value = "gaussian")]
    pub init: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub reg: RegArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    /// Number of synthetic training kernels.
    #[arg(long, default_value_t = 2000)]
    pub kernels: usize,
    /// Comma-separated kernel sizes.
    #[arg(long, value_delimiter = ',', default_value = "7,9,11,13,15")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Upper end of the training noise range.
    #[arg(long, default_value_t = 0.02)]
    pub sigma_max: f64,
}

#[derive(Args, Debug)]
pub struct DeblurArgs {
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long)]
    pub sigma: String,
    #[arg(long, value_enum, default_value_t = AlgoArg::Fastem)]
    pub algo: AlgoArg,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// EM iterations (em only).
    #[arg(long = "L", default_value_t = 10)]
    pub iterations: usize,
    #[arg(long, default_value_t = 11)]
    pub ksize: usize,
    #[arg(long, default_value = "gaussian")]
    pub init: String,
    /// Fast EM runs the M-step every this many timesteps.
    #[arg(long, default_value_t = 1)]
    pub mstep_every: usize,
    /// Keep a kernel snapshot every this many trace records.
    #[arg(long, default_value_t = 10)]
    pub trace_stride: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub reg: RegArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Dataset manifest supplying sharp images and true kernels; without it a
    /// synthetic texture set is generated.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Synthetic items.
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// Synthetic image side.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 11)]
    pub ksize: usize,
    /// Comma-separated noise levels, e.g. 5/255,20/255.
    #[arg(long, value_delimiter = ',', default_value = "5/255,10/255,20/255")]
    pub sigmas: Vec<String>,
    /// Comma-separated regularizers.
    #[arg(long, value_delimiter = ',', default_value = "l2,pnp")]
    pub regs: Vec<RegArg>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e3)]
    pub beta: f64,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value = "gaussian")]
    pub init: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = AlgoArg::Fastem)]
    pub algo: AlgoArg,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long = "L", default_value_t = 10)]
    pub iterations: usize,
    #[arg(long, default_value_t = 11)]
    pub ksize: usize,
    #[arg(long, default_value = "gaussian")]
    pub init: String,
    /// Record per-item wall-clock time (makes reports run-dependent).
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub reg: RegArgs,
}
