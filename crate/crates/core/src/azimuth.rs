//! Pose treatments for the azimuth θ.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{kl_standard_normal, reparameterize_with, GaussianLatent, NoiseSource};
use crate::nn::{Dense, Module, Parameter};
use crate::tensor::{Scalar, Tensor};

/// Dimension of the pose latent `z_θ`.
pub const AZIMUTH_DIM: usize = 1;
/// Hidden width of the pose head.
pub const HEAD_WIDTH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AzimuthMode {
    /// θ = 0 for every example.
    Fixed,
    /// θ ~ U(−π, π), carrying no gradient.
    Uniform,
    /// Global posterior `N(μ_θ, σ_θ²)` mapped through a tanh head.
    Latent,
    /// θ predicted by the encoder, adversarially pushed toward U(−1, 1).
    EncoderUniform,
}

impl AzimuthMode {
    pub fn name(self) -> &'static str {
        match self {
            AzimuthMode::Fixed => "fixed",
            AzimuthMode::Uniform => "uniform",
            AzimuthMode::Latent => "latent",
            AzimuthMode::EncoderUniform => "encoder-uniform",
        }
    }
}

impl fmt::Display for AzimuthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AzimuthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(AzimuthMode::Fixed),
            "uniform" => Ok(AzimuthMode::Uniform),
            "latent" => Ok(AzimuthMode::Latent),
            "encoder-uniform" => Ok(AzimuthMode::EncoderUniform),
            other => Err(Error::Config(format!("unknown azimuth mode `{other}`"))),
        }
    }
}

/// Non-amortized pose posterior: `μ_θ` and `log σ_θ` are free parameters,
/// not functions of the input image.
#[derive(Clone, Debug)]
pub struct AzimuthPosterior<T: Scalar> {
    mu: Parameter<T>,
    log_sigma: Parameter<T>,
    hidden: Dense<T>,
    out: Dense<T>,
}

impl<T: Scalar> AzimuthPosterior<T> {
    pub fn new(noise: &mut NoiseSource) -> Result<Self> {
        Ok(AzimuthPosterior {
            mu: Parameter::new("azimuth.mu", vec![T::zero(); AZIMUTH_DIM], &[AZIMUTH_DIM])?,
            log_sigma: Parameter::new("azimuth.log_sigma", vec![T::zero(); AZIMUTH_DIM], &[AZIMUTH_DIM])?,
            hidden: Dense::new("azimuth.head0", AZIMUTH_DIM, HEAD_WIDTH, noise)?,
            out: Dense::new("azimuth.head1", HEAD_WIDTH, 1, noise)?,
        })
    }

    pub fn mu(&self) -> &Parameter<T> {
        &self.mu
    }

    pub fn log_sigma(&self) -> &Parameter<T> {
        &self.log_sigma
    }

    pub fn head_layers(&self) -> (&Dense<T>, &Dense<T>) {
        (&self.hidden, &self.out)
    }

    /// The posterior as a `[1, dθ]` Gaussian.
    pub fn latent(&self) -> Result<GaussianLatent<T>> {
        GaussianLatent::new(
            self.mu.tensor().reshape(&[1, AZIMUTH_DIM])?,
            self.log_sigma.tensor().reshape(&[1, AZIMUTH_DIM])?,
        )
    }

    /// Final pre-activation of the head, `[B, 1]`.
    pub fn head_logit(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.out.forward(&self.hidden.forward(z)?.tanh())
    }

    /// `θ = π·tanh(head(z))`, `[B, dθ]` → `[B]`.
    pub fn head(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let b = z.shape()[0];
        self.head_logit(z)?.tanh().mul_scalar(PI).reshape(&[b])
    }

    /// Draws `z_θ = μ_θ + σ_θ·ε` per example; returns `(z_θ, θ)`.
    pub fn sample(&self, noise: &mut NoiseSource, batch: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let eps = noise.normal_tensor(&[batch, AZIMUTH_DIM]);
        let z = reparameterize_with(&self.latent()?, &eps)?;
        let theta = self.head(&z)?;
        Ok((z, theta))
    }
}

impl<T: Scalar> Module<T> for AzimuthPosterior<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        let mut p = vec![self.mu.clone(), self.log_sigma.clone()];
        p.extend(self.hidden.parameters());
        p.extend(self.out.parameters());
        p
    }
}

/// Result of drawing a batch of azimuths.
#[derive(Clone, Debug)]
pub struct AzimuthSample<T: Scalar> {
    /// `[B]`, radians.
    pub theta: Tensor<T>,
    /// Pose latent samples `[B, dθ]` (latent mode only).
    pub z_theta: Option<Tensor<T>>,
}

/// Draws θ for a batch. `encoder_t` is the encoder's pose output in (−1, 1),
/// shape `[B, 1]`, required in encoder-uniform mode.
pub fn sample_azimuth<T: Scalar>(
    mode: AzimuthMode,
    posterior: Option<&AzimuthPosterior<T>>,
    encoder_t: Option<&Tensor<T>>,
    noise: &mut NoiseSource,
    batch: usize,
) -> Result<AzimuthSample<T>> {
    match mode {
        AzimuthMode::Fixed => Ok(AzimuthSample {
            theta: Tensor::zeros(&[batch]),
            z_theta: None,
        }),
        AzimuthMode::Uniform => {
            let v = noise.uniform_vec(batch, -PI, PI);
            Ok(AzimuthSample {
                theta: Tensor::from_f64(&v, &[batch])?,
                z_theta: None,
            })
        }
        AzimuthMode::Latent => {
            let post = posterior.ok_or(Error::MissingPosterior)?;
            let (z, theta) = post.sample(noise, batch)?;
            Ok(AzimuthSample {
                theta,
                z_theta: Some(z),
            })
        }
        AzimuthMode::EncoderUniform => {
            let t = encoder_t.ok_or(Error::MissingEncoderAzimuth)?;
            Ok(AzimuthSample {
                theta: t.mul_scalar(PI).reshape(&[batch])?,
                z_theta: None,
            })
        }
    }
}

/// `KL(N(μ_θ, σ_θ²) || N(0, 1))`.
pub fn azimuth_kl<T: Scalar>(posterior: &AzimuthPosterior<T>) -> Result<Tensor<T>> {
    kl_standard_normal(&posterior.latent()?)
}
