//! The full autoencoder: image encoder, voxel decoder, renderer, optional
//! texturizer, pose model and latent discriminators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::azimuth::{azimuth_kl, sample_azimuth, AzimuthMode, AzimuthPosterior};
use crate::error::{Error, Result};
use crate::latent::{
    aae_losses, discriminator_accuracy, kl_standard_normal, mu_regularizer, recon_two_term, reparameterize,
    GaussianLatent, NoiseSource,
};
use crate::nn::{center_crop3d, conv2d_output_size, ensure_unique, BatchNorm, Conv2d, Deconv3d, Dense, Module, Parameter, LEAKY_SLOPE};
use crate::optim::{AdamConfig, DEFAULT_LR, DEFAULT_LR_AZIMUTH};
use crate::render::{render, Sampling};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_BETA: f64 = 30.0;
pub const DEFAULT_DZ: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Vae,
    BetaVae,
    MuVae,
    Aae,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Vae => "vae",
            Objective::BetaVae => "beta-vae",
            Objective::MuVae => "mu-vae",
            Objective::Aae => "aae",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vae" => Ok(Objective::Vae),
            "beta-vae" => Ok(Objective::BetaVae),
            "mu-vae" => Ok(Objective::MuVae),
            "aae" => Ok(Objective::Aae),
            other => Err(Error::Config(format!("unknown objective `{other}`"))),
        }
    }
}

/// Layer widths. `Full` is the reference network; `Compact` keeps the same
/// topology with narrow layers so desk-scale runs fit on one CPU core; `Toy`
/// works on 4³ grids for finite-difference checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchPreset {
    Full,
    Compact,
    Toy,
}

impl FromStr for ArchPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ArchPreset::Full),
            "compact" => Ok(ArchPreset::Compact),
            "toy" => Ok(ArchPreset::Toy),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch {
    /// Image edge and voxel grid edge.
    pub res: usize,
    /// Output channels of each stride-2 conv.
    pub enc_channels: Vec<usize>,
    /// Edge of the first decoder volume.
    pub dec_base: usize,
    /// Channels of the first decoder volume followed by each deconv's output.
    pub dec_channels: Vec<usize>,
    pub disc_hidden: [usize; 2],
    pub tex_hidden: usize,
}

impl Arch {
    pub fn preset(p: ArchPreset) -> Self {
        match p {
            ArchPreset::Full => Arch {
                res: 28,
                enc_channels: vec![32, 64, 128, 256, 256],
                dec_base: 4,
                dec_channels: vec![256, 128, 64, 1],
                disc_hidden: [128, 64],
                tex_hidden: 784,
            },
            ArchPreset::Compact => Arch {
                res: 28,
                enc_channels: vec![8, 16, 32, 32, 32],
                dec_base: 4,
                dec_channels: vec![16, 8, 4, 1],
                disc_hidden: [128, 64],
                tex_hidden: 784,
            },
            ArchPreset::Toy => Arch {
                res: 4,
                enc_channels: vec![3, 4],
                dec_base: 1,
                dec_channels: vec![3, 2, 1],
                disc_hidden: [8, 4],
                tex_hidden: 16,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let mut side = self.res;
        for _ in &self.enc_channels {
            side = conv2d_output_size(side).0;
        }
        if side != 1 {
            return Err(Error::Config(format!(
                "encoder reduces {0}×{0} to {side}×{side}, expected 1×1",
                self.res
            )));
        }
        let out = self.dec_base << (self.dec_channels.len().saturating_sub(1));
        if self.dec_channels.len() < 2 || *self.dec_channels.last().unwrap() != 1 || out < self.res {
            return Err(Error::Config("decoder must end in one channel at or above the grid size".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub objective: Objective,
    /// KL weight, only read by `beta-vae`.
    pub beta: f64,
    /// Weight of the batch-mean penalty for `mu-vae`.
    pub lambda_reg: f64,
    pub azimuth: AzimuthMode,
    /// Regularize the pose latent with the run's regularizer (latent mode).
    pub azimuth_reg: bool,
    pub texturizer: bool,
    pub sampling: Sampling,
    pub dz: usize,
    pub seed: u64,
    pub arch: ArchPreset,
    pub lr: f64,
    pub lr_azimuth: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Pose-model updates per autoencoder update.
    pub azimuth_steps: usize,
    /// Initial bias of the last deconv, so the first renders are not saturated.
    pub decoder_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            objective: Objective::Vae,
            beta: DEFAULT_BETA,
            lambda_reg: 1.0,
            azimuth: AzimuthMode::Fixed,
            azimuth_reg: true,
            texturizer: false,
            sampling: Sampling::Nearest,
            dz: DEFAULT_DZ,
            seed: 0,
            arch: ArchPreset::Full,
            lr: DEFAULT_LR,
            lr_azimuth: DEFAULT_LR_AZIMUTH,
            beta1: 0.9,
            beta2: 0.999,
            azimuth_steps: 1,
            decoder_bias: -4.0,
        }
    }
}

impl ModelConfig {
    pub fn new(objective: Objective, azimuth: AzimuthMode) -> Self {
        ModelConfig {
            objective,
            azimuth,
            sampling: Self::default_sampling(azimuth),
            ..Self::default()
        }
    }

    /// Latent mode learns θ by backpropagation, which needs trilinear sampling.
    pub fn default_sampling(azimuth: AzimuthMode) -> Sampling {
        match azimuth {
            AzimuthMode::Latent => Sampling::Trilinear,
            _ => Sampling::Nearest,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective == Objective::Aae && self.azimuth == AzimuthMode::Latent {
            return Err(Error::Config(
                "aae regularizes latents adversarially and has no KL for a latent azimuth; use --azimuth encoder-uniform"
                    .into(),
            ));
        }
        if self.azimuth == AzimuthMode::EncoderUniform && self.objective != Objective::Aae {
            return Err(Error::Config(
                "encoder-uniform azimuth needs the adversarial uniform prior of --objective aae".into(),
            ));
        }
        if self.beta < 1.0 {
            return Err(Error::Config(format!("beta must be at least 1, got {}", self.beta)));
        }
        if self.lambda_reg < 0.0 {
            return Err(Error::Config("lambda-reg must be non-negative".into()));
        }
        if self.dz == 0 {
            return Err(Error::Config("dz must be positive".into()));
        }
        if self.azimuth_steps == 0 {
            return Err(Error::Config("azimuth-steps must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr_azimuth >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Arch::preset(self.arch).validate()
    }

    pub fn main_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    pub fn azimuth_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_azimuth,
            ..self.main_adam()
        }
    }
}

/// Rejects images with pixels outside `[0, 1]`.
pub fn check_pixels<T: Scalar>(x: &Tensor<T>) -> Result<()> {
    let data = x.data();
    match data.iter().position(|v| !(*v >= T::zero() && *v <= T::one())) {
        Some(index) => Err(Error::PixelRange {
            index,
            value: data[index].as_f64(),
        }),
        None => Ok(()),
    }
}

#[derive(Clone, Debug)]
pub struct Encoder<T: Scalar> {
    res: usize,
    convs: Vec<(Conv2d<T>, BatchNorm<T>)>,
    mu: Dense<T>,
    log_sigma: Dense<T>,
    theta: Option<Dense<T>>,
}

#[derive(Clone, Debug)]
pub struct EncoderOutput<T: Scalar> {
    pub latent: GaussianLatent<T>,
    /// Pose output in (−1, 1), `[B, 1]` (encoder-uniform mode).
    pub theta_t: Option<Tensor<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(arch: &Arch, dz: usize, pose_branch: bool, noise: &mut NoiseSource) -> Result<Self> {
        let mut convs = Vec::new();
        let mut in_ch = 1;
        for (i, &c) in arch.enc_channels.iter().enumerate() {
            convs.push((
                Conv2d::new(&format!("encoder.conv{i}"), in_ch, c, noise)?,
                BatchNorm::new(&format!("encoder.bn{i}"), c)?,
            ));
            in_ch = c;
        }
        let theta = if pose_branch {
            Some(Dense::new("encoder.theta", in_ch, 1, noise)?)
        } else {
            None
        };
        Ok(Encoder {
            res: arch.res,
            convs,
            mu: Dense::new("encoder.mu", in_ch, dz, noise)?,
            log_sigma: Dense::new("encoder.log_sigma", in_ch, dz, noise)?,
            theta,
        })
    }

    /// `x`: `[B, N, N]` images.
    pub fn forward(&self, x: &Tensor<T>) -> Result<EncoderOutput<T>> {
        let b = x.shape()[0];
        let mut h = x.reshape(&[b, 1, self.res, self.res])?;
        for (conv, bn) in &self.convs {
            h = bn.forward(&conv.forward(&h)?)?.leaky_relu(LEAKY_SLOPE);
        }
        let features = h.numel() / b;
        let h = h.reshape(&[b, features])?;
        let latent = GaussianLatent::new(self.mu.forward(&h)?, self.log_sigma.forward(&h)?)?;
        let theta_t = match &self.theta {
            Some(layer) => Some(layer.forward(&h)?.tanh()),
            None => None,
        };
        Ok(EncoderOutput { latent, theta_t })
    }

    fn set_training(&self, training: bool) {
        self.convs.iter().for_each(|(_, bn)| bn.set_training(training));
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        let mut p = Vec::new();
        for (conv, bn) in &self.convs {
            p.extend(conv.parameters());
            p.extend(bn.parameters());
        }
        p.extend(self.mu.parameters());
        p.extend(self.log_sigma.parameters());
        if let Some(t) = &self.theta {
            p.extend(t.parameters());
        }
        p
    }

    fn buffers(&self) -> Vec<Parameter<T>> {
        self.convs.iter().flat_map(|(_, bn)| bn.buffers()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Decoder<T: Scalar> {
    res: usize,
    base: usize,
    base_ch: usize,
    project: Dense<T>,
    deconvs: Vec<Deconv3d<T>>,
    norms: Vec<BatchNorm<T>>,
}

impl<T: Scalar> Decoder<T> {
    pub fn new(arch: &Arch, dz: usize, output_bias: f64, noise: &mut NoiseSource) -> Result<Self> {
        let base_ch = arch.dec_channels[0];
        let project = Dense::new("decoder.project", dz, base_ch * arch.dec_base.pow(3), noise)?;
        let mut deconvs = Vec::new();
        let mut norms = Vec::new();
        let pairs: Vec<_> = arch.dec_channels.windows(2).map(|w| (w[0], w[1])).collect();
        for (i, &(cin, cout)) in pairs.iter().enumerate() {
            deconvs.push(Deconv3d::new(&format!("decoder.deconv{i}"), cin, cout, noise)?);
            if i + 1 < pairs.len() {
                norms.push(BatchNorm::new(&format!("decoder.bn{i}"), cout)?);
            }
        }
        deconvs.last().expect("validated").fill_bias(output_bias);
        Ok(Decoder {
            res: arch.res,
            base: arch.dec_base,
            base_ch,
            project,
            deconvs,
            norms,
        })
    }

    /// `z`: `[B, dz]` → occupancy `[B, N, N, N]` in (0, 1).
    pub fn forward(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let b = z.shape()[0];
        let s = self.base;
        let mut h = self
            .project
            .forward(z)?
            .leaky_relu(LEAKY_SLOPE)
            .reshape(&[b, self.base_ch, s, s, s])?;
        for (i, deconv) in self.deconvs.iter().enumerate() {
            h = deconv.forward(&h)?;
            if let Some(bn) = self.norms.get(i) {
                h = bn.forward(&h)?.leaky_relu(LEAKY_SLOPE);
            }
        }
        let n = self.res;
        center_crop3d(&h, n)?.sigmoid().reshape(&[b, n, n, n])
    }

    pub fn deconvs(&self) -> &[Deconv3d<T>] {
        &self.deconvs
    }

    fn set_training(&self, training: bool) {
        self.norms.iter().for_each(|bn| bn.set_training(training));
    }
}

impl<T: Scalar> Module<T> for Decoder<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        let mut p = self.project.parameters();
        for (i, d) in self.deconvs.iter().enumerate() {
            p.extend(d.parameters());
            if let Some(bn) = self.norms.get(i) {
                p.extend(bn.parameters());
            }
        }
        p
    }

    fn buffers(&self) -> Vec<Parameter<T>> {
        self.norms.iter().flat_map(|bn| bn.buffers()).collect()
    }
}

/// Two dense layers refining the projection: leaky ReLU, then sigmoid.
#[derive(Clone, Debug)]
pub struct Texturizer<T: Scalar> {
    res: usize,
    hidden: Dense<T>,
    out: Dense<T>,
}

impl<T: Scalar> Texturizer<T> {
    pub fn new(arch: &Arch, noise: &mut NoiseSource) -> Result<Self> {
        let pixels = arch.res * arch.res;
        Ok(Texturizer {
            res: arch.res,
            hidden: Dense::new("texturizer.hidden", pixels, arch.tex_hidden, noise)?,
            out: Dense::new("texturizer.out", arch.tex_hidden, pixels, noise)?,
        })
    }

    /// `[B, N, N]` projection → `[B, N, N]` image.
    pub fn forward(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        let b = img.shape()[0];
        let n = self.res;
        let h = self.hidden.forward(&img.reshape(&[b, n * n])?)?.leaky_relu(LEAKY_SLOPE);
        self.out.forward(&h)?.sigmoid().reshape(&[b, n, n])
    }
}

impl<T: Scalar> Module<T> for Texturizer<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        let mut p = self.hidden.parameters();
        p.extend(self.out.parameters());
        p
    }
}

/// Dense classifier on latent codes, emitting logits `[B, 1]`.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar> {
    layers: Vec<Dense<T>>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(name: &str, input: usize, hidden: [usize; 2], noise: &mut NoiseSource) -> Result<Self> {
        Ok(Discriminator {
            layers: vec![
                Dense::new(&format!("{name}.0"), input, hidden[0], noise)?,
                Dense::new(&format!("{name}.1"), hidden[0], hidden[1], noise)?,
                Dense::new(&format!("{name}.2"), hidden[1], 1, noise)?,
            ],
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(x, false)
    }

    /// Same logits, with the discriminator's parameters held constant.
    pub fn forward_frozen(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(x, true)
    }

    fn run(&self, x: &Tensor<T>, frozen: bool) -> Result<Tensor<T>> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = if frozen { layer.forward_frozen(&h)? } else { layer.forward(&h)? };
            if i < last {
                h = h.leaky_relu(LEAKY_SLOPE);
            }
        }
        Ok(h)
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }
}

/// Per-step scalars reported alongside the losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub recon: f64,
    /// Weighted regularization term (KL, batch-mean penalty or generator loss).
    pub reg: f64,
    pub total: f64,
    /// Unweighted KL of the shape latent (vae, beta-vae).
    pub kl: Option<f64>,
    /// `‖mean_i z_i‖` over the batch.
    pub z_mean_norm: f64,
    /// Discriminator accuracy on this batch, before its update (aae).
    pub disc_acc: Option<f64>,
    /// Posterior μ_θ in latent mode; batch mean of θ otherwise.
    pub theta_mu: f64,
    /// Posterior σ_θ in latent mode; batch std of θ otherwise.
    pub theta_sigma: f64,
}

pub struct ForwardOutput<T: Scalar> {
    pub grid: Tensor<T>,
    pub z: Tensor<T>,
    pub theta: Tensor<T>,
    pub x_proj: Tensor<T>,
    pub x_tex: Option<Tensor<T>>,
    pub recon: Tensor<T>,
    pub reg: Tensor<T>,
    /// `recon + reg`, drives the encoder, decoder, texturizer and pose model.
    pub total: Tensor<T>,
    /// Drives only the discriminators (aae).
    pub disc_loss: Option<Tensor<T>>,
    pub diagnostics: Diagnostics,
}

pub struct Model<T: Scalar> {
    config: ModelConfig,
    arch: Arch,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
    pub texturizer: Option<Texturizer<T>>,
    pub posterior: Option<AzimuthPosterior<T>>,
    pub z_disc: Option<Discriminator<T>>,
    pub theta_disc: Option<Discriminator<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let arch = Arch::preset(config.arch);
        let mut noise = NoiseSource::with_stream(config.seed, 0);
        let aae = config.objective == Objective::Aae;
        let pose_branch = config.azimuth == AzimuthMode::EncoderUniform;
        let encoder = Encoder::new(&arch, config.dz, pose_branch, &mut noise)?;
        let decoder = Decoder::new(&arch, config.dz, config.decoder_bias, &mut noise)?;
        let texturizer = if config.texturizer {
            Some(Texturizer::new(&arch, &mut noise)?)
        } else {
            None
        };
        let posterior = if config.azimuth == AzimuthMode::Latent {
            Some(AzimuthPosterior::new(&mut noise)?)
        } else {
            None
        };
        let z_disc = if aae {
            Some(Discriminator::new("disc_z", config.dz, arch.disc_hidden, &mut noise)?)
        } else {
            None
        };
        let theta_disc = if aae && pose_branch {
            Some(Discriminator::new("disc_theta", 1, arch.disc_hidden, &mut noise)?)
        } else {
            None
        };
        let model = Model {
            config,
            arch,
            encoder,
            decoder,
            texturizer,
            posterior,
            z_disc,
            theta_disc,
        };
        ensure_unique(&model.state())?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn res(&self) -> usize {
        self.arch.res
    }

    /// Encoder, decoder and texturizer parameters.
    pub fn main_parameters(&self) -> Vec<Parameter<T>> {
        let mut p = self.encoder.parameters();
        p.extend(self.decoder.parameters());
        if let Some(t) = &self.texturizer {
            p.extend(t.parameters());
        }
        p
    }

    /// μ_θ, log σ_θ and the pose head.
    pub fn azimuth_parameters(&self) -> Vec<Parameter<T>> {
        self.posterior.as_ref().map(|p| p.parameters()).unwrap_or_default()
    }

    pub fn disc_parameters(&self) -> Vec<Parameter<T>> {
        let mut p = Vec::new();
        for d in [&self.z_disc, &self.theta_disc].into_iter().flatten() {
            p.extend(d.parameters());
        }
        p
    }

    pub fn parameters(&self) -> Vec<Parameter<T>> {
        let mut p = self.main_parameters();
        p.extend(self.azimuth_parameters());
        p.extend(self.disc_parameters());
        p
    }

    pub fn buffers(&self) -> Vec<Parameter<T>> {
        let mut b = self.encoder.buffers();
        b.extend(self.decoder.buffers());
        b
    }

    /// Everything a checkpoint stores: parameters, then buffers.
    pub fn state(&self) -> Vec<Parameter<T>> {
        let mut s = self.parameters();
        s.extend(self.buffers());
        s
    }

    pub fn zero_grad(&self) {
        self.parameters().iter().for_each(|p| p.tensor().zero_grad());
    }

    /// Toggles batchnorm between batch statistics and running estimates.
    pub fn set_training(&self, training: bool) {
        self.encoder.set_training(training);
        self.decoder.set_training(training);
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<EncoderOutput<T>> {
        check_pixels(x)?;
        self.encoder.forward(x)
    }

    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.decoder.forward(z)
    }

    /// Renders `[Bv, N, N, N]` grids at azimuths `[B]` with zero elevation.
    pub fn render(&self, grid: &Tensor<T>, theta: &Tensor<T>) -> Result<Tensor<T>> {
        let phi = Tensor::zeros(theta.shape());
        render(grid, theta, &phi, self.config.sampling)
    }

    pub fn texturize(&self, img: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        self.texturizer.as_ref().map(|t| t.forward(img)).transpose()
    }

    /// One pass of the full pipeline on images `x`: `[B, N, N]`.
    pub fn forward(&self, x: &Tensor<T>, noise: &mut NoiseSource) -> Result<ForwardOutput<T>> {
        let c = &self.config;
        let b = x.shape().first().copied().unwrap_or(0);
        let enc = self.encode(x)?;
        let z = reparameterize(&enc.latent, noise)?;
        let grid = self.decode(&z)?;
        let az = sample_azimuth(c.azimuth, self.posterior.as_ref(), enc.theta_t.as_ref(), noise, b)?;
        let x_proj = self.render(&grid, &az.theta)?;
        let x_tex = self.texturize(&x_proj)?;
        let recon = recon_two_term(x, &x_proj, x_tex.as_ref())?;

        let mut kl_value = None;
        let mut disc_loss = None;
        let mut disc_acc = None;
        let mut reg = match c.objective {
            Objective::Vae | Objective::BetaVae => {
                let kl = kl_standard_normal(&enc.latent)?;
                kl_value = Some(kl.item().as_f64());
                kl.mul_scalar(self.kl_weight())
            }
            Objective::MuVae => mu_regularizer(&z)?.mul_scalar(c.lambda_reg),
            Objective::Aae => {
                let disc = self.z_disc.as_ref().expect("aae has a latent discriminator");
                let prior = noise.normal_tensor(&[b, c.dz]);
                let (d, g, acc) = adversarial_terms(disc, &prior, &z)?;
                let (mut d_total, mut g_total, mut hits) = (d, g, acc * 2.0 * b as f64);
                let mut count = 2 * b;
                if let (Some(tdisc), Some(t)) = (&self.theta_disc, &enc.theta_t) {
                    let prior = Tensor::from_f64(&noise.uniform_vec(b, -1.0, 1.0), &[b, 1])?;
                    let (d, g, acc) = adversarial_terms(tdisc, &prior, t)?;
                    d_total = d_total.add(&d)?;
                    g_total = g_total.add(&g)?;
                    hits += acc * 2.0 * b as f64;
                    count += 2 * b;
                }
                disc_loss = Some(d_total);
                disc_acc = Some(hits / count as f64);
                g_total
            }
        };
        if let (Some(post), Some(z_theta)) = (&self.posterior, &az.z_theta) {
            if c.azimuth_reg {
                let extra = match c.objective {
                    Objective::MuVae => mu_regularizer(z_theta)?.mul_scalar(c.lambda_reg),
                    _ => azimuth_kl(post)?.mul_scalar(self.kl_weight()),
                };
                reg = reg.add(&extra)?;
            }
        }
        let total = recon.add(&reg)?;

        let (theta_mu, theta_sigma) = match &self.posterior {
            Some(post) => (
                post.mu().tensor().item().as_f64(),
                post.log_sigma().tensor().item().as_f64().exp(),
            ),
            None => mean_std(&az.theta.to_f64_vec()),
        };
        let diagnostics = Diagnostics {
            recon: recon.item().as_f64(),
            reg: reg.item().as_f64(),
            total: total.item().as_f64(),
            kl: kl_value,
            z_mean_norm: batch_mean_norm(&z),
            disc_acc,
            theta_mu,
            theta_sigma,
        };
        Ok(ForwardOutput {
            grid,
            z,
            theta: az.theta,
            x_proj,
            x_tex,
            recon,
            reg,
            total,
            disc_loss,
            diagnostics,
        })
    }

    fn kl_weight(&self) -> f64 {
        match self.config.objective {
            Objective::BetaVae => self.config.beta,
            _ => 1.0,
        }
    }

    /// Accuracy of the latent discriminator on fresh prior samples against
    /// posterior samples of `x`, in eval mode and without gradients.
    pub fn latent_disc_accuracy(&self, x: &Tensor<T>, noise: &mut NoiseSource) -> Result<f64> {
        let disc = self
            .z_disc
            .as_ref()
            .ok_or_else(|| Error::Config("model has no latent discriminator".into()))?;
        crate::tensor::no_grad(|| {
            self.set_training(false);
            let result = (|| {
                let enc = self.encode(x)?;
                let z = reparameterize(&enc.latent, noise)?;
                let prior = noise.normal_tensor(z.shape());
                Ok(discriminator_accuracy(&disc.forward(&prior)?, &disc.forward(&z)?))
            })();
            self.set_training(true);
            result
        })
    }
}

/// Discriminator loss on `(prior, detached fake)`, generator loss through a
/// frozen discriminator, and the discriminator's accuracy.
fn adversarial_terms<T: Scalar>(
    disc: &Discriminator<T>,
    prior: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, f64)> {
    let real_logits = disc.forward(prior)?;
    let fake_logits = disc.forward(&fake.detach())?;
    let (d_loss, _) = aae_losses(&real_logits, &fake_logits)?;
    let (_, g_loss) = aae_losses(&real_logits.detach(), &disc.forward_frozen(fake)?)?;
    let acc = discriminator_accuracy(&real_logits, &fake_logits);
    Ok((d_loss, g_loss, acc))
}

/// `‖(1/B) Σ_i z_i‖` for `z: [B, d]`.
pub fn batch_mean_norm<T: Scalar>(z: &Tensor<T>) -> f64 {
    let s = z.shape();
    let (b, d) = (s[0], s[1..].iter().product::<usize>());
    let data = z.data();
    (0..d)
        .map(|j| {
            let m = (0..b).map(|i| data[i * d + j].as_f64()).sum::<f64>() / b as f64;
            m * m
        })
        .sum::<f64>()
        .sqrt()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
