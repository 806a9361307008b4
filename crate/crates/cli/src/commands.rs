use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use voxlift::data::load_dataset;
use voxlift::gradsuite::run_gradient_suite;
use voxlift::io::{read_pgm, read_voxels, tile, write_pgm, write_points, write_voxels, Checkpoint};
use voxlift::render::render_pose;
use voxlift::train::{run_training, CHECKPOINT_FILE};
use voxlift::{
    no_grad, AzimuthMode, Model, ModelConfig, NoiseSource, Objective, Pose, Sampling, Tensor, TrainOptions, VoxelGrid,
};

use crate::{GlobalOpts, GridArgs};

/// Azimuths in a sweep, `θ_k = −π + 2πk/64`.
pub const SWEEP_STEPS: usize = 64;
const SWEEP_COLS: usize = 8;
const STILL_ELEVATIONS: [f64; 3] = [0.0, 30.0, 90.0];
const SAMPLE_ELEVATIONS: [f64; 2] = [0.0, 30.0];
/// Noise stream for prior draws made by the inspection commands.
const PRIOR_STREAM: u64 = 4;

pub fn train_config(opts: &GlobalOpts) -> Result<ModelConfig> {
    let objective = opts.objective.unwrap_or(Objective::Vae);
    let azimuth = opts.azimuth.unwrap_or(AzimuthMode::Fixed);
    if opts.beta.is_some() && objective != Objective::BetaVae {
        bail!("--beta only applies to --objective beta-vae (got {objective})");
    }
    let mut c = ModelConfig::new(objective, azimuth);
    c.seed = opts.seed;
    c.texturizer = opts.texturizer;
    c.azimuth_reg = !opts.no_azimuth_reg;
    if let Some(v) = opts.sampling {
        c.sampling = v;
    }
    if let Some(v) = opts.dz {
        c.dz = v;
    }
    if let Some(v) = opts.beta {
        c.beta = v;
    }
    if let Some(v) = opts.lambda_reg {
        c.lambda_reg = v;
    }
    if let Some(v) = opts.arch {
        c.arch = v;
    }
    if let Some(v) = opts.lr {
        c.lr = v;
    }
    if let Some(v) = opts.lr_azimuth {
        c.lr_azimuth = v;
    }
    if let Some(v) = opts.beta1 {
        c.beta1 = v;
    }
    if let Some(v) = opts.beta2 {
        c.beta2 = v;
    }
    if let Some(v) = opts.azimuth_steps {
        c.azimuth_steps = v;
    }
    c.validate().context("invalid configuration")?;
    Ok(c)
}

pub fn train(opts: &GlobalOpts) -> Result<()> {
    let config = train_config(opts)?;
    let data = load_dataset(opts.dataset, &opts.data_dir, opts.seed, opts.limit)
        .with_context(|| format!("loading {} from {}", opts.dataset, opts.data_dir.display()))?;
    let train_opts = TrainOptions {
        steps: opts.steps,
        batch_size: opts.batch_size,
        out_dir: opts.out_dir.clone(),
        checkpoint_every: opts.checkpoint_every,
    };
    let summary = run_training(config, &data, &train_opts)?;
    match summary.history.last() {
        Some(d) => println!(
            "{} steps on {} {} images: recon {:.5} reg {:.5} total {:.5}",
            opts.steps,
            data.len(),
            opts.dataset,
            d.recon,
            d.reg,
            d.total
        ),
        None => println!("wrote initial checkpoint"),
    }
    println!("checkpoint {}", summary.checkpoint.display());
    println!("metrics {}", summary.metrics.display());
    Ok(())
}

/// Loads a checkpoint in eval mode, rejecting model flags that disagree with it.
fn load_model(opts: &GlobalOpts, path: Option<PathBuf>) -> Result<Model<f32>> {
    let path = path.unwrap_or_else(|| opts.out_dir.join(CHECKPOINT_FILE));
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let c = &ckpt.config;
    let mismatch = |flag: &str, given: String, stored: String| {
        bail!("checkpoint was trained with --{flag} {stored}, not {given}")
    };
    if let Some(v) = opts.objective.filter(|&v| v != c.objective) {
        mismatch("objective", v.to_string(), c.objective.to_string())?;
    }
    if let Some(v) = opts.azimuth.filter(|&v| v != c.azimuth) {
        mismatch("azimuth", v.to_string(), c.azimuth.to_string())?;
    }
    if let Some(v) = opts.dz.filter(|&v| v != c.dz) {
        mismatch("dz", v.to_string(), c.dz.to_string())?;
    }
    if let Some(v) = opts.arch.filter(|&v| v != c.arch) {
        mismatch("arch", format!("{v:?}"), format!("{:?}", c.arch))?;
    }
    if opts.texturizer && !c.texturizer {
        bail!("checkpoint has no texturizer");
    }
    let model = ckpt.restore()?;
    model.set_training(false);
    Ok(model)
}

fn sampling(opts: &GlobalOpts, model: &Model<f32>) -> Sampling {
    opts.sampling.unwrap_or(model.config().sampling)
}

fn read_image(path: &Path, side: usize) -> Result<Vec<f32>> {
    let img = read_pgm(path).with_context(|| format!("reading {}", path.display()))?;
    ensure!(
        img.width == side && img.height == side,
        "{} is {}x{}, the model expects {side}x{side}",
        path.display(),
        img.width,
        img.height
    );
    Ok(img.pixels.iter().map(|&p| p as f32 / 255.0).collect())
}

fn dataset_images(opts: &GlobalOpts, indices: &[usize]) -> Result<Vec<Vec<f32>>> {
    let data = load_dataset(opts.dataset, &opts.data_dir, opts.seed, opts.limit)
        .with_context(|| format!("loading {} from {}", opts.dataset, opts.data_dir.display()))?;
    indices
        .iter()
        .map(|&i| {
            ensure!(i < data.len(), "image {i} requested from a dataset of {}", data.len());
            Ok(data.image(i).to_vec())
        })
        .collect()
}

/// Encodes images to their posterior means and decodes them. Returns the
/// grids `[B, N, N, N]` and the azimuth the model assigns to each image.
fn encode_decode(model: &Model<f32>, images: &[Vec<f32>]) -> Result<(Tensor<f32>, Vec<f64>)> {
    let n = model.res();
    let x = Tensor::new(images.concat(), &[images.len(), n, n])?;
    no_grad(|| {
        let enc = model.encode(&x)?;
        let grids = model.decode(&enc.latent.mu)?;
        let thetas = match (model.config().azimuth, &enc.theta_t) {
            (AzimuthMode::EncoderUniform, Some(t)) => t.to_f64_vec().iter().map(|v| v * PI).collect(),
            (AzimuthMode::Latent, _) => vec![posterior_mean_theta(model)?; images.len()],
            _ => vec![0.0; images.len()],
        };
        Ok((grids, thetas))
    })
}

fn posterior_mean_theta(model: &Model<f32>) -> Result<f64> {
    let post = model.posterior.as_ref().context("latent azimuth model without a pose posterior")?;
    let mu = post.mu().tensor().reshape(&[1, 1])?;
    Ok(post.head(&mu)?.to_f64_vec()[0])
}

fn render_at(grid: &VoxelGrid, pose: Pose, mode: Sampling) -> Result<Vec<f32>> {
    Ok(render_pose(&grid.to_tensor::<f32>(), pose, mode)?.to_vec())
}

fn write_sheet(path: &Path, images: &[Vec<f32>], side: usize, cols: usize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let (w, h, px) = tile(images, side, cols)?;
    write_pgm(path, w, h, &px).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn reconstruct(opts: &GlobalOpts, checkpoint: Option<PathBuf>, inputs: &[PathBuf], count: usize) -> Result<()> {
    let model = load_model(opts, checkpoint)?;
    let n = model.res();
    let images = if inputs.is_empty() {
        dataset_images(opts, &(0..count).collect::<Vec<_>>())?
    } else {
        inputs.iter().map(|p| read_image(p, n)).collect::<Result<_>>()?
    };
    ensure!(!images.is_empty(), "nothing to reconstruct");
    let mode = sampling(opts, &model);
    let (grids, thetas) = encode_decode(&model, &images)?;
    let mut projections = Vec::with_capacity(images.len());
    for (i, &theta) in thetas.iter().enumerate() {
        projections.push(render_at(&VoxelGrid::from_tensor(&grids, i)?, Pose::azimuth(theta), mode)?);
    }
    let textured = no_grad(|| model.texturize(&Tensor::new(projections.concat(), &[images.len(), n, n])?))?;

    let mut sheet = Vec::new();
    let mut sq = 0.0f64;
    for (i, (x, p)) in images.iter().zip(&projections).enumerate() {
        sq += x.iter().zip(p).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
        sheet.push(x.clone());
        sheet.push(p.clone());
        if let Some(t) = &textured {
            sheet.push(t.to_vec()[i * n * n..(i + 1) * n * n].to_vec());
        }
    }
    let cols = if textured.is_some() { 3 } else { 2 };
    write_sheet(&opts.out_dir.join("reconstruct.pgm"), &sheet, n, cols)?;
    println!("projection mse {:.6}", sq / (images.len() * n * n) as f64);
    Ok(())
}

pub fn sample(opts: &GlobalOpts, checkpoint: Option<PathBuf>, count: usize) -> Result<()> {
    ensure!(count > 0, "--count must be positive");
    let model = load_model(opts, checkpoint)?;
    let n = model.res();
    let mode = sampling(opts, &model);
    let mut noise = NoiseSource::with_stream(opts.seed, PRIOR_STREAM);
    let z = noise.normal_tensor::<f32>(&[count, model.config().dz]);
    let (grids, thetas) = no_grad(|| -> Result<_> {
        let grids = model.decode(&z)?;
        let thetas = match (&model.posterior, model.config().azimuth) {
            (Some(post), AzimuthMode::Latent) => post.head(&noise.normal_tensor(&[count, 1]))?.to_f64_vec(),
            _ => vec![0.0; count],
        };
        Ok((grids, thetas))
    })?;
    let mut sheet = Vec::with_capacity(count * SAMPLE_ELEVATIONS.len());
    for elevation in SAMPLE_ELEVATIONS {
        for (i, &theta) in thetas.iter().enumerate() {
            let pose = Pose::new(theta, elevation.to_radians());
            sheet.push(render_at(&VoxelGrid::from_tensor(&grids, i)?, pose, mode)?);
        }
    }
    write_sheet(&opts.out_dir.join("sample.pgm"), &sheet, n, count)
}

/// The grid a sweep or export works on, with the model's azimuth for it.
fn chosen_grid(opts: &GlobalOpts, args: &GridArgs) -> Result<(VoxelGrid, f64, Sampling)> {
    let model = load_model(opts, args.checkpoint.clone())?;
    let mode = sampling(opts, &model);
    let dz = model.config().dz;
    let decode = |z: Vec<f64>| -> Result<(VoxelGrid, f64, Sampling)> {
        let grid = no_grad(|| model.decode(&Tensor::from_f64(&z, &[1, dz])?))?;
        Ok((VoxelGrid::from_tensor(&grid, 0)?, 0.0, mode))
    };
    if let Some(z) = &args.z {
        ensure!(z.len() == dz, "--z has {} values, the model's latent has {dz}", z.len());
        return decode(z.clone());
    }
    if args.from_prior {
        return decode(NoiseSource::with_stream(opts.seed, PRIOR_STREAM).normal_vec(dz));
    }
    let image = match &args.input {
        Some(path) => read_image(path, model.res())?,
        None => dataset_images(opts, &[args.index.unwrap_or(0)])?.remove(0),
    };
    let (grids, thetas) = encode_decode(&model, &[image])?;
    Ok((VoxelGrid::from_tensor(&grids, 0)?, thetas[0], mode))
}

pub fn sweep(opts: &GlobalOpts, args: &GridArgs, voxels: Option<PathBuf>) -> Result<()> {
    let (grid, theta, mode) = match voxels {
        Some(path) => {
            let grid = read_voxels(&path).with_context(|| format!("reading {}", path.display()))?;
            (grid, 0.0, opts.sampling.unwrap_or(Sampling::Nearest))
        }
        None => chosen_grid(opts, args)?,
    };
    let n = grid.size();
    let frames = (0..SWEEP_STEPS)
        .map(|k| {
            let theta = -PI + 2.0 * PI * k as f64 / SWEEP_STEPS as f64;
            render_at(&grid, Pose::azimuth(theta), mode)
        })
        .collect::<Result<Vec<_>>>()?;
    write_sheet(&opts.out_dir.join("sweep.pgm"), &frames, n, SWEEP_COLS)?;
    let stills = STILL_ELEVATIONS
        .iter()
        .map(|e| render_at(&grid, Pose::new(theta, e.to_radians()), mode))
        .collect::<Result<Vec<_>>>()?;
    write_sheet(&opts.out_dir.join("stills.pgm"), &stills, n, STILL_ELEVATIONS.len())
}

pub fn export_voxels(opts: &GlobalOpts, args: &GridArgs, threshold: f32) -> Result<()> {
    let (grid, _, _) = chosen_grid(opts, args)?;
    fs::create_dir_all(&opts.out_dir)?;
    let vox = opts.out_dir.join("voxels.vox");
    let points = opts.out_dir.join("points.txt");
    write_voxels(&vox, &grid)?;
    let count = write_points(&points, &grid, threshold)?;
    println!("wrote {}", vox.display());
    println!("wrote {} ({count} points above {threshold})", points.display());
    Ok(())
}

pub fn gradcheck(opts: &GlobalOpts) -> Result<()> {
    let cases = run_gradient_suite(opts.seed)?;
    let mut failed = 0;
    for c in &cases {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<40} {:.3e}  {status}", c.name, c.max_rel_err);
        failed += usize::from(!c.passed());
    }
    ensure!(failed == 0, "{failed} of {} gradient checks failed", cases.len());
    println!("{} gradient checks passed", cases.len());
    Ok(())
}
