use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "interpolab", version, about = "Numerical laboratory for p-variance inequalities")]
pub struct Cli {
    /// Seed for every randomised routine.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Write the report here instead of stdout; `.csv` selects CSV.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub out: Option<String>,

    #[arg(long, global = true, value_enum)]
    #[serde(skip)]
    pub format: Option<Format>,

    /// Add the wall-clock time to the report (makes output non-reproducible).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// List the measure keys.
    Catalog,
    /// Optimal constants.
    #[command(subcommand)]
    Constant(ConstantCmd),
    /// Randomised property suites.
    #[command(subcommand)]
    Verify(VerifyCmd),
    /// Witnessed I(a) constants for a measure and a test function.
    IaRatio(IaRatioArgs),
    /// The transport map between exponential-power and symmetric exponential laws.
    #[command(subcommand)]
    Transport(TransportCmd),
    /// Tail bounds and Monte Carlo tails.
    #[command(subcommand)]
    Tail(TailCmd),
    /// Moment generating function checks.
    #[command(subcommand)]
    Mgf(MgfCmd),
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantCmd {
    /// Two-point space with `μ({1}) = alpha`.
    TwoPoint(TwoPointArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct TwoPointArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub p: f64,
    /// Also run the brute-force optimiser and report the gap.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, default_value_t = 4000)]
    pub resolution: usize,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyCmd {
    Lemma(LemmaArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct LemmaArgs {
    #[arg(long)]
    pub id: String,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct IaRatioArgs {
    /// Measure key, see `catalog`.
    #[arg(long)]
    pub measure: String,
    /// Test function; variables x1..xn, or x in one dimension.
    #[arg(long)]
    pub f: String,
    /// Values of p: a list `1,1.5` or a range `a:b:step`.
    #[arg(long, default_value = "1:1.9:0.1")]
    pub p: String,
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Optional energy weight, an expression in x.
    #[arg(long)]
    pub weight: Option<String>,
    /// Claimed constant; any ratio above it is a violation.
    #[arg(long)]
    pub claim: Option<f64>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportCmd {
    Build(TransportBuildArgs),
    Check(TransportCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Dump {
    Csv,
}

#[derive(Debug, Args, Serialize)]
pub struct TransportBuildArgs {
    #[arg(long)]
    pub r: f64,
    /// Emit the node table instead of the summary.
    #[arg(long, value_enum)]
    pub dump: Option<Dump>,
}

#[derive(Debug, Args, Serialize)]
pub struct TransportCheckArgs {
    #[arg(long)]
    pub r: f64,
    #[arg(long, default_value_t = 30.0)]
    pub xmax: f64,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    /// Draws for the pushforward test; 0 skips it.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailCmd {
    Mc(TailMcArgs),
    Bound(TailBoundArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct TailMcArgs {
    #[arg(long)]
    pub r: f64,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// 1-Lipschitz function of x1..xn.
    #[arg(long, default_value = "x1")]
    pub h: String,
    #[arg(long, default_value = "0.5:3.5:0.1")]
    pub t: String,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TailBoundArgs {
    #[arg(long)]
    pub a: f64,
    #[arg(long, default_value = "0:4:0.25")]
    pub t: String,
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    #[arg(long)]
    pub optimized: bool,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MgfCmd {
    Verify(MgfVerifyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct MgfVerifyArgs {
    #[arg(long)]
    pub measure: String,
    #[arg(long, default_value = "x1")]
    pub h: String,
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    #[arg(long, default_value = "0:1.8:0.1")]
    pub lambda: String,
    #[arg(long, default_value = "1,1.5,1.9,1.99")]
    pub p: String,
}
