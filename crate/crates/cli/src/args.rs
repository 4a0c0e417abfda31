use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use notipkit::{Connectivity, Method};

#[derive(Debug, Parser)]
#[command(
    name = "notipkit",
    version,
    about = "Post hoc FDP/TDP bounds with learned templates"
)]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a ground truth plus inference and training datasets from a config.
    Simulate(SimulateArgs),
    /// Learn a template from training data.
    Learn(LearnArgs),
    /// Calibrate a family and report the largest FDP-controlled region.
    Infer(InferArgs),
    /// TDP lower bounds on supra-threshold clusters.
    ClusterReport(ClusterArgs),
    /// Run the simulation study and write per-run metrics.
    Experiment(ExperimentArgs),
    /// Write a learned template as long-format CSV.
    ExportTemplate(ExportArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ari,
    Simes,
    Notip,
    NotipSingle,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ari => Method::Ari,
            MethodArg::Simes => Method::CalibratedSimes,
            MethodArg::Notip => Method::Notip,
            MethodArg::NotipSingle => Method::NotipSingle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConnectivityArg {
    Face,
    FaceEdge,
    FaceEdgeCorner,
}

impl From<ConnectivityArg> for Connectivity {
    fn from(c: ConnectivityArg) -> Self {
        match c {
            ConnectivityArg::Face => Connectivity::Face,
            ConnectivityArg::FaceEdge => Connectivity::FaceEdge,
            ConnectivityArg::FaceEdgeCorner => Connectivity::FaceEdgeCorner,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long, short = 'o', default_value = ".")]
    pub output_dir: PathBuf,
}

/// Input data and test design.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Subjects-by-tests matrix (`.csv` or binary container).
    #[arg(long)]
    pub data: PathBuf,
    /// One 0/1 group label per subject; switches to a two-sample test.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Two-sided instead of upper-tail p-values.
    #[arg(long)]
    pub two_sided: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// TOML simulation config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "NOTIPKIT_SEED")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long, default_value_t = 10_000)]
    pub b_train: usize,
    /// Template length (default: 2% of the number of tests).
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long, env = "NOTIPKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Leave out the identity transform.
    #[arg(long)]
    pub no_identity: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// Calibration settings shared by `infer` and `cluster-report`.
#[derive(Debug, Clone, Args)]
pub struct CalibArgs {
    /// Learned template (required by `notip` unless `--single`).
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Learn and calibrate on the same dataset with two randomization rounds.
    #[arg(long)]
    pub single: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long, default_value_t = 1_000)]
    pub b_infer: usize,
    /// Training randomizations for `--single`.
    #[arg(long, default_value_t = 10_000)]
    pub b_train: usize,
    #[arg(long, env = "NOTIPKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_identity: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long, value_enum, default_value = "notip")]
    pub method: MethodArg,
    #[command(flatten)]
    pub calib: CalibArgs,
    #[arg(long, default_value_t = 0.1)]
    pub q: f64,
    /// File of 0-based test indices; adds a bound for that subset.
    #[arg(long)]
    pub subset: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Grid shape, e.g. `10,10,10`; the product must equal the number of tests.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    /// Cluster-forming thresholds on the z map; one table per value.
    #[arg(long, value_delimiter = ',', default_values_t = [3.0])]
    pub z_threshold: Vec<f64>,
    #[arg(long, value_enum, default_value = "face")]
    pub connectivity: ConnectivityArg,
    /// Families to report (default: ari and simes, plus notip when a template is given).
    #[arg(long = "methods", value_enum, value_delimiter = ',')]
    pub methods: Vec<MethodArg>,
    /// Voxel size in mm, one value per axis.
    #[arg(long, value_delimiter = ',')]
    pub voxel_size: Option<Vec<f64>>,
    /// World coordinate of voxel (0, 0, 0) in mm.
    #[arg(long, value_delimiter = ',')]
    pub origin: Option<Vec<f64>>,
    #[command(flatten)]
    pub calib: CalibArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_runs: Option<usize>,
    #[arg(long, env = "NOTIPKIT_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long)]
    pub b_train: Option<usize>,
    #[arg(long)]
    pub b_infer: Option<usize>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub template: PathBuf,
    /// Keep every n-th curve.
    #[arg(long, default_value_t = 1)]
    pub every: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}
