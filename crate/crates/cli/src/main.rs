mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "bodyfit", version, about = "Parametric body fitting and related geometry tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a toy model with synthetic targets and ground truth
    Synth(SynthArgs),
    /// Fit the model to target files
    Fit(FitArgs),
    /// Decode heatmaps into coordinates and uncertainties
    Decode(DecodeArgs),
    /// Compute the Laplacian eigenbasis of a tet mesh
    Eigs(EigsArgs),
    /// Evaluate point signatures from an eigenbasis
    Gps(GpsArgs),
    /// Build interior interpolation weights from the template
    Weights(WeightsArgs),
    /// Move interior points with a fitted body
    Deform(DeformArgs),
    /// Time batch fitting across batch and subset sizes
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelShape {
    /// Toy model vertex count
    #[arg(long, default_value_t = 602)]
    pub verts: usize,
    /// Toy model joint count
    #[arg(long, default_value_t = 16)]
    pub joints: usize,
    /// Toy model shape components
    #[arg(long, default_value_t = 10)]
    pub betas: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub cases: usize,
    /// Consecutive cases sharing one shape vector
    #[arg(long, default_value_t = 1)]
    pub views: usize,
    /// Isotropic noise standard deviation in meters
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Per-point noise scales drawn log-uniformly from LO,HI meters (stored as sigmas)
    #[arg(long, value_delimiter = ',')]
    pub sigma_range: Option<Vec<f64>>,
    #[arg(long, default_value_t = 60.0)]
    pub max_angle_deg: f64,
    #[arg(long, default_value_t = 2.0)]
    pub max_beta: f64,
    /// Half-width of the translation box in meters
    #[arg(long, default_value_t = 1.0)]
    pub max_translation: f64,
    #[command(flatten)]
    pub model: ModelShape,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Clean input transfer: one iteration, no shape ridge, 4096-vertex subset
    Transfer,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Target files or glob patterns
    #[arg(long, num_args = 1.., required = true)]
    pub targets: Vec<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Leading shape components excluded from the ridge
    #[arg(long)]
    pub unpenalized: Option<usize>,
    /// Weight points by sigma^-exp when targets carry sigmas
    #[arg(long)]
    pub uncertainty_weights: bool,
    #[arg(long)]
    pub uncertainty_exp: Option<f64>,
    /// JSON array of vertex indices to fit on
    #[arg(long, conflicts_with = "subset_size")]
    pub subset: Option<PathBuf>,
    /// Stratified vertex subset of this size
    #[arg(long)]
    pub subset_size: Option<usize>,
    /// Treat all targets as views of one subject
    #[arg(long)]
    pub shared_beta: bool,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Recorded in the manifest; fitting itself draws no random numbers
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: available parallelism)
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecodeArgs {
    #[arg(long)]
    pub heatmaps: PathBuf,
    /// Camera intrinsics FX,FY,CX,CY for absolute placement
    #[arg(long, value_delimiter = ',')]
    pub intrinsics: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Auto,
    Dense,
    Sparse,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EigsArgs {
    /// Tet mesh file
    #[arg(long, required_unless_present = "cube")]
    pub mesh: Option<PathBuf>,
    /// Use a unit cube with this many cells per axis
    #[arg(long, conflicts_with = "mesh")]
    pub cube: Option<usize>,
    /// Write the generated cube mesh here
    #[arg(long, requires = "cube")]
    pub mesh_out: Option<PathBuf>,
    #[arg(long, default_value_t = bodyfit::gps::DEFAULT_NUM_EIGENFUNCTIONS)]
    pub num: usize,
    #[arg(long, value_enum, default_value_t = SolverChoice::Auto)]
    pub solver: SolverChoice,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GpsArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WeightsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Canonical query points file
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long, default_value_t = bodyfit::deform::DEFAULT_NEIGHBORS)]
    pub k: usize,
    #[arg(long, default_value_t = bodyfit::deform::DEFAULT_IDW_POWER)]
    pub power: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DeformArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Fit result or ground-truth pose file
    #[arg(long)]
    pub result: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "16,64,256")]
    pub batch_sizes: Vec<usize>,
    /// Vertex subset sizes; 0 means all vertices
    #[arg(long, value_delimiter = ',', default_value = "0,100")]
    pub subset_sizes: Vec<usize>,
    #[arg(long, default_value_t = 0.005)]
    pub noise: f64,
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub model: ModelShape,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth(a) => commands::synth::run(&a),
        Command::Fit(a) => commands::fit::run(&a),
        Command::Decode(a) => commands::decode::run(&a),
        Command::Eigs(a) => commands::spectral::eigs(&a),
        Command::Gps(a) => commands::spectral::gps(&a),
        Command::Weights(a) => commands::deform::weights(&a),
        Command::Deform(a) => commands::deform::deform(&a),
        Command::Bench(a) => commands::bench::run(&a),
    }
}
