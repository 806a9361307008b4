mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use voxlift::data::Source;
use voxlift::{ArchPreset, AzimuthMode, Objective, Sampling};

#[derive(Parser, Debug)]
#[command(name = "voxlift", version, about = "Learn 3D voxel shapes from single 2D views, without pose labels")]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Model flags passed to a command that
/// loads a checkpoint must agree with the checkpoint's configuration.
#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Seed for initialization, batching and sampling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// vae, beta-vae, mu-vae or aae.
    #[arg(long, global = true)]
    pub objective: Option<Objective>,
    /// fixed, uniform, latent or encoder-uniform.
    #[arg(long, global = true)]
    pub azimuth: Option<AzimuthMode>,
    /// Add the two-layer texturizer after the renderer.
    #[arg(long, global = true)]
    pub texturizer: bool,
    /// nearest or trilinear rotation sampling.
    #[arg(long, global = true)]
    pub sampling: Option<Sampling>,
    /// Shape latent size.
    #[arg(long, global = true)]
    pub dz: Option<usize>,
    /// KL weight; only valid with --objective beta-vae (default 30).
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Weight of the batch-mean penalty for mu-vae.
    #[arg(long, global = true)]
    pub lambda_reg: Option<f64>,
    /// full, compact or toy network widths.
    #[arg(long, global = true)]
    pub arch: Option<ArchPreset>,
    #[arg(long, global = true, default_value_t = 1000)]
    pub steps: u64,
    #[arg(long, global = true, default_value_t = 32)]
    pub batch_size: usize,
    /// Holds `mnist/` and `fashion/` IDX files.
    #[arg(long, global = true, default_value = "data")]
    pub data_dir: PathBuf,
    /// mnist, fashion, synthetic or mixed.
    #[arg(long, global = true, default_value = "synthetic")]
    pub dataset: Source,
    /// Keep only the first N images.
    #[arg(long, global = true)]
    pub limit: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Main Adam learning rate.
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Pose-model Adam learning rate.
    #[arg(long, global = true)]
    pub lr_azimuth: Option<f64>,
    #[arg(long, global = true)]
    pub beta1: Option<f64>,
    #[arg(long, global = true)]
    pub beta2: Option<f64>,
    /// Pose-model updates per autoencoder update (latent mode).
    #[arg(long, global = true)]
    pub azimuth_steps: Option<usize>,
    /// Leave the pose latent unregularized.
    #[arg(long, global = true)]
    pub no_azimuth_reg: bool,
    /// Also write a checkpoint every N steps (0 disables).
    #[arg(long, global = true, default_value_t = 0)]
    pub checkpoint_every: u64,
}

/// Where a command gets the grid it renders or exports.
#[derive(Args, Debug, Clone, Default)]
pub struct GridArgs {
    /// Defaults to `<out-dir>/checkpoint.v3da`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Encode this PGM image.
    #[arg(long, conflicts_with_all = ["from_prior", "z", "index"])]
    pub input: Option<PathBuf>,
    /// Encode this dataset image (default 0).
    #[arg(long, conflicts_with_all = ["from_prior", "z"])]
    pub index: Option<usize>,
    /// Decode a latent drawn from N(0, I).
    #[arg(long, conflicts_with = "z")]
    pub from_prior: bool,
    /// Decode this latent, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub z: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write its checkpoint and metrics log.
    Train,
    /// Write (input, projection, texturized) rows for encoded images.
    Reconstruct {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// PGM images to encode instead of dataset images.
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Dataset images to use when no --input is given.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Decode latents drawn from the prior and render them at elevations 0 and 30.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Render one grid at 64 azimuths across [-pi, pi), plus elevation stills.
    Sweep {
        #[command(flatten)]
        grid: GridArgs,
        /// Sweep a voxel file instead of a decoded grid.
        #[arg(long, conflicts_with_all = ["checkpoint", "input", "index", "from_prior", "z"])]
        voxels: Option<PathBuf>,
    },
    /// Write a decoded grid as a voxel file and a thresholded point list.
    ExportVoxels {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = &cli.opts;
    let result = match cli.command {
        Command::Train => commands::train(opts),
        Command::Reconstruct { checkpoint, input, count } => commands::reconstruct(opts, checkpoint, &input, count),
        Command::Sample { checkpoint, count } => commands::sample(opts, checkpoint, count),
        Command::Sweep { grid, voxels } => commands::sweep(opts, &grid, voxels),
        Command::ExportVoxels { grid, threshold } => commands::export_voxels(opts, &grid, threshold),
        Command::Gradcheck => commands::gradcheck(opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
