//! `slsi`: generate, compress, train, simulate and evaluate linear models.

mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigFile;
use crate::error::CliError;

const AFTER_HELP: &str = "\
Config files hold `key = value` lines under [section] headers, with `#`
comments. Sections: [generate.transport-flow], [generate.burgers],
[generate.lti], [compress], [train], [simulate], [evaluate], [spectrum].
Keys are the long flag names without the leading dashes (e.g. `lr-max = 0.01`).
Unknown sections or keys are rejected. Flags override config values.

Files ending in `.bin` are written in the binary format, anything else as
text. Readers detect the format automatically.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.";

#[derive(Parser, Debug)]
#[command(name = "slsi", version, about = "Stable linear system inference from snapshot data", after_help = AFTER_HELP)]
struct Cli {
    /// Configuration file with per-command sections.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a snapshot data set.
    Generate {
        #[command(subcommand)]
        kind: GenerateKind,
    },
    /// Fit a POD basis and write the reduced snapshots.
    Compress(CompressArgs),
    /// Train a model on snapshot data.
    Train(TrainArgs),
    /// Simulate a model and write the trajectory as a snapshot file.
    Simulate(SimulateArgs),
    /// Compare model predictions with test trajectories.
    Evaluate(EvaluateArgs),
    /// Write the eigenvalues of one or more models as CSV.
    Spectrum(SpectrumArgs),
}

#[derive(Args, Debug, Clone)]
pub struct NoiseArgs {
    /// Relative additive Gaussian noise level (std = noise * RMS of the data) [default: 0]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Seed for the noise generator [default: 0]
    #[arg(long)]
    pub noise_seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum GenerateKind {
    /// Analytic flow u = sin(5(t-x))sin(5(t-y)), v = cos(5(t-x))cos(5(t-y)).
    TransportFlow(TransportArgs),
    /// Viscous Burgers equation with initial conditions 1 + sin((2f z + 1) pi).
    Burgers(BurgersArgs),
    /// Trajectories of a seeded random asymptotically stable system.
    Lti(LtiArgs),
}

#[derive(Args, Debug)]
pub struct TransportArgs {
    /// Output snapshot file.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Grid points per axis [default: 200]
    #[arg(long)]
    pub grid: Option<usize>,
    /// Number of snapshots in [0, t-end] [default: 100]
    #[arg(long)]
    pub times: Option<usize>,
    /// Final time [default: 5]
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Domain is [-half-width, half-width]^2 [default: 1.5]
    #[arg(long)]
    pub half_width: Option<f64>,
    #[command(flatten)]
    pub noise: NoiseArgs,
}

#[derive(Args, Debug)]
pub struct BurgersArgs {
    /// Output snapshot file (the training split when --test-out is given).
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also split off the test frequencies 1.75, 2.75, 3.75 into this file.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// Spatial grid points on [0, 1] [default: 1000]
    #[arg(long)]
    pub grid: Option<usize>,
    /// Viscosity [default: 0.01]
    #[arg(long)]
    pub viscosity: Option<f64>,
    /// Final time [default: 1]
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Time steps per trajectory; each trajectory has samples + 1 snapshots [default: 500]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Initial-condition frequencies, comma separated [default: 1.0,1.25,...,5.0]
    #[arg(long, value_delimiter = ',')]
    pub f: Vec<f64>,
    /// Advection discretization: central or upwind [default: central]
    #[arg(long)]
    pub advection: Option<String>,
    /// Maximum solver substeps per snapshot interval [default: 1000000]
    #[arg(long)]
    pub max_substeps: Option<usize>,
    #[command(flatten)]
    pub noise: NoiseArgs,
}

#[derive(Args, Debug)]
pub struct LtiArgs {
    /// Output snapshot file.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write the generating model to this file.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// State dimension [default: 2]
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed for the system and the initial states [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Lower bound on the eigenvalues of R [default: 0.1]
    #[arg(long)]
    pub margin: Option<f64>,
    /// Number of trajectories [default: 3]
    #[arg(long)]
    pub trajectories: Option<usize>,
    /// Time step [default: 0.01]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Steps per trajectory [default: 500]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Number of sinusoidal inputs; 0 for an autonomous system [default: 0]
    #[arg(long)]
    pub inputs: Option<usize>,
    #[command(flatten)]
    pub noise: NoiseArgs,
}

#[derive(Args, Debug)]
pub struct CompressArgs {
    /// Input snapshot file.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output basis file.
    #[arg(long)]
    pub basis: PathBuf,
    /// Output file for the reduced snapshots.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Keep exactly this many modes.
    #[arg(long, conflicts_with = "energy")]
    pub rank: Option<usize>,
    /// Keep the fewest modes whose squared singular values reach this fraction [default: 0.999]
    #[arg(long)]
    pub energy: Option<f64>,
    /// Subtract the snapshot mean before the SVD [default: false]
    #[arg(long)]
    pub center: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Input snapshot file.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output model file.
    #[arg(long, short)]
    pub out: PathBuf,
    /// slsi, lsi, deriv-ls or deriv-stable [default: slsi]
    #[arg(long)]
    pub method: Option<String>,
    /// Loss history CSV [default: <out>.loss.csv]
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Eigenvalue report CSV [default: <out>.eigs.csv]
    #[arg(long)]
    pub eigen_csv: Option<PathBuf>,
    /// Adam updates [default: 20000]
    #[arg(long)]
    pub updates: Option<usize>,
    /// Lower learning rate of the triangular cycle [default: 1e-6]
    #[arg(long)]
    pub lr_min: Option<f64>,
    /// Upper learning rate of the triangular cycle [default: 1e-2]
    #[arg(long)]
    pub lr_max: Option<f64>,
    /// Updates per learning-rate cycle [default: updates / 10]
    #[arg(long)]
    pub cycle: Option<usize>,
    /// Adam first-moment decay [default: 0.9]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Adam second-moment decay [default: 0.999]
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Adam denominator offset [default: 1e-8]
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// Standard deviation of the initial parameters [default: 0.1]
    #[arg(long)]
    pub init_std: Option<f64>,
    /// Seed for the initial parameters [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// RK4 steps unrolled inside the loss [default: 1]
    #[arg(long)]
    pub unroll: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Model file.
    #[arg(long, short)]
    pub model: PathBuf,
    /// Output snapshot file.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Initial state, comma separated (in the basis' full space when --basis is given).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with = "x0_from")]
    pub x0: Vec<f64>,
    /// Take the initial state (and inputs, grid defaults) from this snapshot file.
    #[arg(long)]
    pub x0_from: Option<PathBuf>,
    /// Trajectory of --x0-from to use [default: 0]
    #[arg(long)]
    pub trajectory: Option<usize>,
    /// Basis used to project the initial state and lift the output.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Time step [default: from --x0-from, else 0.01]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Number of steps [default: from --x0-from, else 500]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Initial time [default: from --x0-from, else 0]
    #[arg(long)]
    pub t0: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Model file.
    #[arg(long, short)]
    pub model: PathBuf,
    /// Test snapshot file.
    #[arg(long, short)]
    pub test: PathBuf,
    /// Basis; errors are then measured in the full space.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Metrics CSV with one row per test trajectory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Per-time-step error series CSV.
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Pointwise absolute error field CSV for one trajectory.
    #[arg(long)]
    pub error_field: Option<PathBuf>,
    /// Trajectory written to --error-field [default: 0]
    #[arg(long)]
    pub trajectory: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    /// Model files.
    #[arg(long = "model", short, required = true)]
    pub models: Vec<PathBuf>,
    /// Output CSV.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Half-width of the zoom window |Re| <= zoom marked in the `zoom` column [default: 1]
    #[arg(long)]
    pub zoom: Option<f64>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Generate { kind } => match kind {
            GenerateKind::TransportFlow(a) => commands::generate_transport(&a, &cfg.section("generate.transport-flow")),
            GenerateKind::Burgers(a) => commands::generate_burgers(&a, &cfg.section("generate.burgers")),
            GenerateKind::Lti(a) => commands::generate_lti(&a, &cfg.section("generate.lti")),
        },
        Command::Compress(a) => commands::compress(&a, &cfg.section("compress")),
        Command::Train(a) => commands::train(&a, &cfg.section("train")),
        Command::Simulate(a) => commands::simulate(&a, &cfg.section("simulate")),
        Command::Evaluate(a) => commands::evaluate(&a, &cfg.section("evaluate")),
        Command::Spectrum(a) => commands::spectrum(&a, &cfg.section("spectrum")),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
