//! Training loop, metrics log and the pose-supervised decoder fit.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use crate::data::{Batcher, ImageDataset};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::latent::NoiseSource;
use crate::model::{Diagnostics, Model, ModelConfig};
use crate::nn::Module;
use crate::optim::{Adam, AdamConfig, DualOptimizer, Phase};
use crate::render::{render, VoxelGrid};
use crate::tensor::{no_grad, Tensor};

pub const METRICS_HEADER: &str = "step\trecon\treg\ttotal\ttheta_mu\ttheta_sigma\tdisc_acc";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.v3da";

/// One metrics line; `disc_acc` is `-` when there is no discriminator.
pub fn metrics_line(step: u64, d: &Diagnostics) -> String {
    let acc = d.disc_acc.map_or_else(|| "-".to_string(), |a| a.to_string());
    format!(
        "{step}\t{}\t{}\t{}\t{}\t{}\t{acc}",
        d.recon, d.reg, d.total, d.theta_mu, d.theta_sigma
    )
}

/// A model with its optimizers and noise stream.
pub struct Trainer {
    model: Model<f32>,
    optim: DualOptimizer<f32>,
    disc_optim: Option<Adam<f32>>,
    noise: NoiseSource,
    step: u64,
}

impl Trainer {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let model = Model::new(config)?;
        Self::with_model(model)
    }

    pub fn with_model(model: Model<f32>) -> Result<Self> {
        let c = model.config().clone();
        let main = Adam::new(c.main_adam(), model.main_parameters())?;
        let azimuth_params = model.azimuth_parameters();
        let azimuth = if azimuth_params.is_empty() {
            None
        } else {
            Some(Adam::new(c.azimuth_adam(), azimuth_params)?)
        };
        let disc_params = model.disc_parameters();
        let disc_optim = if disc_params.is_empty() {
            None
        } else {
            Some(Adam::new(c.main_adam(), disc_params)?)
        };
        Ok(Trainer {
            optim: DualOptimizer::new(main, azimuth)?,
            disc_optim,
            noise: NoiseSource::with_stream(c.seed, 1),
            model,
            step: 0,
        })
    }

    /// Resumes from a checkpoint, including optimizer moments when present.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::with_model(ckpt.restore()?)?;
        if let Some(s) = ckpt.optimizer("main") {
            t.optim.main_mut().load_state(s)?;
            t.step = s.step;
        }
        if let (Some(s), Some(opt)) = (ckpt.optimizer("azimuth"), t.optim.azimuth_mut()) {
            opt.load_state(s)?;
        }
        if let (Some(s), Some(opt)) = (ckpt.optimizer("disc"), t.disc_optim.as_mut()) {
            opt.load_state(s)?;
        }
        Ok(t)
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn optimizer(&self) -> &DualOptimizer<f32> {
        &self.optim
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn zero_grad(&self) {
        self.optim.zero_grad();
        if let Some(d) = &self.disc_optim {
            d.zero_grad();
        }
    }

    /// One iteration: a discriminator update (aae), then one update of every
    /// autoencoder and pose parameter, then any extra pose-only updates.
    pub fn train_step(&mut self, x: &Tensor<f32>) -> Result<Diagnostics> {
        self.zero_grad();
        let out = self.model.forward(x, &mut self.noise)?;
        let loss = match &out.disc_loss {
            Some(d) => out.total.add(d)?,
            None => out.total.clone(),
        };
        loss.backward()?;
        if let Some(d) = &mut self.disc_optim {
            d.step()?;
        }
        self.optim.step(Phase::Both)?;
        if self.optim.azimuth().is_some() {
            for _ in 1..self.model.config().azimuth_steps {
                self.zero_grad();
                let extra = self.model.forward(x, &mut self.noise)?;
                extra.total.backward()?;
                self.optim.step(Phase::Azimuth)?;
            }
        }
        self.step += 1;
        Ok(out.diagnostics)
    }

    pub fn checkpoint(&self, with_optimizer: bool) -> Checkpoint {
        let optimizers = with_optimizer.then(|| {
            let mut v = vec![("main".to_string(), self.optim.main().state())];
            if let Some(a) = self.optim.azimuth() {
                v.push(("azimuth".to_string(), a.state()));
            }
            if let Some(d) = &self.disc_optim {
                v.push(("disc".to_string(), d.state()));
            }
            v
        });
        Checkpoint::from_model(&self.model, optimizers)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub out_dir: PathBuf,
    /// Write `checkpoint-<step>.v3da` every this many steps (0 disables).
    pub checkpoint_every: u64,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub history: Vec<Diagnostics>,
    /// Mean reconstruction loss of each completed or partial epoch.
    pub epoch_recon: Vec<f64>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub trainer: Trainer,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer").field("step", &self.step).finish_non_exhaustive()
    }
}

/// Trains for `opts.steps` iterations, writing the metrics log and a final
/// checkpoint (with optimizer state) into `opts.out_dir`. With zero steps
/// only the initial checkpoint and an empty log are written.
pub fn run_training(config: ModelConfig, data: &ImageDataset, opts: &TrainOptions) -> Result<TrainSummary> {
    fs::create_dir_all(&opts.out_dir)?;
    let seed = config.seed;
    let mut trainer = Trainer::new(config)?;
    let metrics_path = opts.out_dir.join(METRICS_FILE);
    let mut log = String::new();
    writeln!(log, "{METRICS_HEADER}").expect("string write");

    let mut history = Vec::new();
    let mut epoch_recon = Vec::new();
    if opts.steps > 0 {
        let mut batcher = Batcher::new(data.len(), opts.batch_size, NoiseSource::with_stream(seed, 2))?;
        let (mut sum, mut count) = (0.0, 0usize);
        for _ in 0..opts.steps {
            if batcher.at_epoch_start() && count > 0 {
                epoch_recon.push(sum / count as f64);
                (sum, count) = (0.0, 0);
            }
            let x = data.batch::<f32>(&batcher.next_batch())?;
            let d = trainer.train_step(&x)?;
            if !d.total.is_finite() {
                return Err(Error::Config(format!("loss diverged at step {}", trainer.step_count())));
            }
            sum += d.recon;
            count += 1;
            writeln!(log, "{}", metrics_line(trainer.step_count(), &d)).expect("string write");
            if opts.checkpoint_every > 0 && trainer.step_count() % opts.checkpoint_every == 0 {
                let name = format!("checkpoint-{:06}.v3da", trainer.step_count());
                trainer.checkpoint(true).save(&opts.out_dir.join(name))?;
            }
            history.push(d);
        }
        if count > 0 {
            epoch_recon.push(sum / count as f64);
        }
    }
    fs::write(&metrics_path, log)?;
    let checkpoint = opts.out_dir.join(CHECKPOINT_FILE);
    trainer.checkpoint(true).save(&checkpoint)?;
    Ok(TrainSummary {
        history,
        epoch_recon,
        checkpoint,
        metrics: metrics_path,
        trainer,
    })
}

/// Fits the decoder alone to views of one object whose azimuths are known,
/// decoding a fixed zero latent. Returns the learned grid and the loss per
/// step.
pub fn fit_decoder_to_views(
    config: ModelConfig,
    views: &ImageDataset,
    thetas: &[f64],
    steps: usize,
    lr: f64,
) -> Result<(VoxelGrid, Vec<f64>)> {
    if views.len() != thetas.len() {
        return Err(Error::Dataset(format!("{} views but {} azimuths", views.len(), thetas.len())));
    }
    let sampling = config.sampling;
    let dz = config.dz;
    let model = Model::<f32>::new(config)?;
    let decoder = &model.decoder;
    let mut adam = Adam::new(AdamConfig::with_lr(lr), decoder.parameters())?;
    let indices: Vec<usize> = (0..views.len()).collect();
    let target = views.batch::<f32>(&indices)?;
    let theta = Tensor::from_f64(thetas, &[thetas.len()])?;
    let phi = Tensor::zeros(&[thetas.len()]);
    let z = Tensor::zeros(&[1, dz]);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        adam.zero_grad();
        let grid = decoder.forward(&z)?;
        let img = render(&grid, &theta, &phi, sampling)?;
        let loss = img.sub(&target)?.square().mean_all();
        loss.backward()?;
        adam.step()?;
        losses.push(loss.item() as f64);
    }
    let grid = no_grad(|| decoder.forward(&z))?;
    Ok((VoxelGrid::from_tensor(&grid, 0)?, losses))
}
