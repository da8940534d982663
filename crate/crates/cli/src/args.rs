use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const DEFAULT_SEED: u64 = 20240601;

#[derive(Debug, Parser)]
#[command(
    name = "cluster-infer",
    version,
    about = "Cluster-average regression inference and simulation"
)]
pub struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    /// Worker threads for simulations.
    #[arg(
        long,
        global = true,
        env = "CLUSTER_INFER_WORKERS",
        default_value_t = 1
    )]
    pub workers: usize,

    /// Directory receiving the result file and its manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate β̄̂ and POLS on a CSV file and test a linear hypothesis.
    Analyze(AnalyzeArgs),
    /// Test parameter constancy across superblocks.
    Constancy(ConstancyArgs),
    /// Run a Monte Carlo size/power study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV file with a header row.
    pub input: PathBuf,

    #[arg(long, default_value = "cluster")]
    pub cluster_col: String,

    #[arg(long)]
    pub superblock_col: Option<String>,

    /// Response column (raw mode).
    #[arg(long, default_value = "y")]
    pub y_col: String,

    /// Regressor columns, comma separated (raw mode).
    #[arg(long, value_delimiter = ',')]
    pub x_cols: Vec<String>,

    /// Omit the column of ones (raw mode).
    #[arg(long)]
    pub no_intercept: bool,

    /// Use the columns as given instead of an Engel model.
    #[arg(long, conflicts_with = "model")]
    pub raw: bool,

    /// Food expenditure column (Engel models).
    #[arg(long, default_value = "food")]
    pub food_col: String,

    /// Total expenditure column (Engel models).
    #[arg(long, default_value = "total")]
    pub total_col: String,

    /// Add household size as a regressor (Engel models).
    #[arg(long)]
    pub hhsize: bool,

    #[arg(long, default_value = "hhsize")]
    pub hhsize_col: String,

    /// Drop clusters with fewer observations [default: k + 1].
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Correction {
    None,
    SmallSample,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Engel model: linear-share, linear, double-log, semi-log or
    /// working-leser (or 1-5).
    #[arg(long)]
    pub model: Option<String>,

    /// `"R rows; r"`: rows separated by ';', entries by spaces, the last
    /// block is r. Defaults to all slopes equal to zero.
    #[arg(long)]
    pub hypothesis: Option<String>,

    /// Small-sample scaling of the POLS cluster-robust covariance.
    #[arg(long, value_enum, default_value_t = Correction::None)]
    pub crve_correction: Correction,
}

#[derive(Debug, Args)]
pub struct ConstancyArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Engel models to test; repeat or comma separate. Defaults to all five
    /// unless --raw is given.
    #[arg(long, value_delimiter = ',')]
    pub model: Vec<String>,

    /// Reject for large |Z| instead of large Z.
    #[arg(long)]
    pub two_sided: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// 1: one dominant cluster, size/power of the Wald tests.
    /// 2: superblocks, size/power of the constancy test.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub table: u8,

    #[arg(long = "G")]
    pub g: Option<usize>,

    #[arg(long = "N1")]
    pub n1: Option<usize>,

    #[arg(long = "P")]
    pub p: Option<usize>,

    #[arg(long = "D")]
    pub d: Option<usize>,

    /// Replications (at least 100).
    #[arg(long, default_value_t = 2000, conflicts_with = "paper_scale")]
    pub reps: usize,

    /// Use the 10,000 replications of the published tables.
    #[arg(long)]
    pub paper_scale: bool,

    #[arg(long, default_value_t = 0.05)]
    pub level: f64,

    /// Test only the slope instead of the full coefficient vector (table 1).
    #[arg(long)]
    pub slope_only: bool,

    /// Two-sided constancy test (table 2).
    #[arg(long)]
    pub two_sided: bool,

    /// Print an aligned text table instead of JSON.
    #[arg(long)]
    pub text: bool,
}
