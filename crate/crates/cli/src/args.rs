use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "opkern", version, about = "Operator-valued kernel toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble the block Gram matrix and check it is PSD.
    Gram(GramArgs),
    /// Spectra of Gram matrices on nested grids.
    Spectrum(SpectrumArgs),
    /// Run the randomized identity suite.
    Verify(VerifyArgs),
    /// Draw Gaussian process paths and check covariance recovery.
    Sample(SampleArgs),
    /// Truncated orthonormal expansion of the kernel.
    Expand(ExpandArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Flags shared by every subcommand. Anything left unset may come from
/// `--config`; flags win on conflict.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Kernel spec, e.g. `gauss(sigma=1,ell=0.5)`.
    #[arg(long)]
    pub kernel: Option<String>,
    /// `grid(a,b,n)`, `0,0.5,1` or `[[x,y],...]`.
    #[arg(long)]
    pub sites: Option<String>,
    /// Output directory [default: .]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Format of matrix/path artifacts; reports are always JSON [default: csv]
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key=value` file with defaults for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GramArgs {
    #[command(flatten)]
    pub common: Common,
    /// Use this CSV matrix instead of assembling from the kernel.
    #[arg(long)]
    pub raw: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub common: Common,
    /// Strictly increasing grid sizes, e.g. `25,50,100`.
    #[arg(long)]
    pub counts: Option<String>,
    /// Grid interval `a,b` [default: 0,1]
    #[arg(long, allow_hyphen_values = true)]
    pub domain: Option<String>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// [default: 100]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Use this CSV matrix as the Gram matrix without certifying it.
    #[arg(long)]
    pub raw: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of paths [default: 1000]
    #[arg(long)]
    pub count: Option<usize>,
    /// Also write `samples.bin`.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    #[command(flatten)]
    pub common: Common,
    /// Keep eigenvalues above `trunc_tol · λ_max` [default: 1e-12]
    #[arg(long, allow_hyphen_values = true)]
    pub trunc_tol: Option<f64>,
}
