use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "shdebias", version, about = "SH lighting bias analysis and mitigation on synthetic portraits")]
pub struct Cli {
    /// key=value file supplying defaults for any flag; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads (defaults to RAYON_NUM_THREADS or the core count).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus.
    SynthGen(SynthGenArgs),
    /// Estimate SH lights for every corpus image.
    Estimate(EstimateArgs),
    /// Compute alignment statistics and per-class magnitudes.
    Stats(StatsArgs),
    /// DC-normalize and align coefficients.
    Align(AlignArgs),
    /// Emit 2-d scatters of raw, band-0, band 1-8 and aligned coefficients.
    Embed(EmbedArgs),
    /// Rescale every image to its class magnitude.
    RelightScale(RelightScaleArgs),
    /// Summarize bias and mitigation metrics.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 8)]
    pub bit_depth: u32,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output coefficients (`.json` or CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Fit with each item's true albedo and no regularization.
    #[arg(long)]
    pub unbiased: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.7)]
    pub reference_albedo: f64,
    /// DC of the ambient prior light the ridge term pulls toward.
    #[arg(long, default_value_t = 1.0)]
    pub prior_dc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    Linear,
    Encoded,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Raw or normalized coefficients with classes.
    #[arg(long)]
    pub coeffs: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = DomainArg::Linear)]
    pub magnitude_domain: DomainArg,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub coeffs: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedMethod {
    Tsne,
    Pca,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub aligned: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, value_enum, default_value_t = EmbedMethod::Tsne)]
    pub method: EmbedMethod,
}

#[derive(Debug, Args)]
pub struct RelightScaleArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub magnitudes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub aligned: PathBuf,
    #[arg(long)]
    pub magnitudes: PathBuf,
    /// Output JSON report.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
