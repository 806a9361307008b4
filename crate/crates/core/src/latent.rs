//! Gaussian latents, the reparameterization trick, and the training
//! objectives: VAE, β-VAE, μ-VAE and adversarial (AAE) regularization, plus
//! the two-term reconstruction loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Seeded, replayable stream of normal and uniform draws.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseSource { rng }
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        items.shuffle(&mut self.rng);
    }

    pub fn normal_tensor<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        let n = shape.iter().product();
        let data = self.normal_vec(n).into_iter().map(T::lit).collect();
        Tensor::new(data, shape).expect("length matches shape")
    }
}

/// Diagonal Gaussian posterior, `σ = exp(log_sigma)`.
#[derive(Clone, Debug)]
pub struct GaussianLatent<T: Scalar> {
    pub mu: Tensor<T>,
    pub log_sigma: Tensor<T>,
}

impl<T: Scalar> GaussianLatent<T> {
    pub fn new(mu: Tensor<T>, log_sigma: Tensor<T>) -> Result<Self> {
        if mu.shape() != log_sigma.shape() {
            return Err(Error::ShapeMismatch {
                op: "gaussian_latent",
                lhs: mu.shape().to_vec(),
                rhs: log_sigma.shape().to_vec(),
            });
        }
        Ok(GaussianLatent { mu, log_sigma })
    }

    pub fn batch(&self) -> usize {
        self.mu.shape().first().copied().unwrap_or(1)
    }

    pub fn sigma(&self) -> Tensor<T> {
        self.log_sigma.exp()
    }
}

/// `z = μ + σ ⊙ ε` with `ε ~ N(0, I)` drawn from `noise`.
pub fn reparameterize<T: Scalar>(lat: &GaussianLatent<T>, noise: &mut NoiseSource) -> Result<Tensor<T>> {
    let eps = noise.normal_tensor(lat.mu.shape());
    reparameterize_with(lat, &eps)
}

/// Reparameterization with caller-supplied `ε` (treated as a constant).
pub fn reparameterize_with<T: Scalar>(lat: &GaussianLatent<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    lat.mu.add(&lat.sigma().mul(&eps.detach())?)
}

/// Closed-form `KL(N(μ, σ²) || N(0, I))`, summed over latent dimensions and
/// averaged over the batch (axis 0).
pub fn kl_standard_normal<T: Scalar>(lat: &GaussianLatent<T>) -> Result<Tensor<T>> {
    let two_ls = lat.log_sigma.mul_scalar(2.0);
    let per = lat
        .mu
        .square()
        .add(&two_ls.exp())?
        .sub(&two_ls)?
        .add_scalar(-1.0)
        .mul_scalar(0.5);
    Ok(per.sum_all().mul_scalar(1.0 / lat.batch() as f64))
}

fn check_same(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Per-pixel mean squared error between `x` and each reconstruction, summed
/// over the projection term and the optional texturizer term.
pub fn recon_two_term<T: Scalar>(x: &Tensor<T>, x_proj: &Tensor<T>, x_tex: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    check_same("recon", x, x_proj)?;
    let mut loss = x.sub(x_proj)?.square().mean_all();
    if let Some(tex) = x_tex {
        check_same("recon", x, tex)?;
        loss = loss.add(&x.sub(tex)?.square().mean_all())?;
    }
    Ok(loss)
}

/// `recon + β·kl`; β = 1 is the plain VAE.
pub fn beta_vae_loss<T: Scalar>(recon: &Tensor<T>, kl: &Tensor<T>, beta: f64) -> Result<Tensor<T>> {
    if beta < 1.0 {
        return Err(Error::Config(format!("beta must be >= 1, got {beta}")));
    }
    recon.add(&kl.mul_scalar(beta))
}

pub fn vae_loss<T: Scalar>(recon: &Tensor<T>, kl: &Tensor<T>) -> Result<Tensor<T>> {
    beta_vae_loss(recon, kl, 1.0)
}

/// `‖(1/B) Σ_i z_i‖²`: squared norm of the batch mean of latent samples.
pub fn mu_regularizer<T: Scalar>(z: &Tensor<T>) -> Result<Tensor<T>> {
    if z.shape().first().copied().unwrap_or(0) < 2 {
        return Err(Error::BatchOfOne("mu-vae regularizer"));
    }
    Ok(z.mean(&[0])?.square().sum_all())
}

pub fn mu_vae_loss<T: Scalar>(recon: &Tensor<T>, z: &Tensor<T>, lambda_reg: f64) -> Result<Tensor<T>> {
    recon.add(&mu_regularizer(z)?.mul_scalar(lambda_reg))
}

/// Mean binary cross-entropy of `logits` against a constant `target`,
/// computed as `max(l, 0) − l·t + ln(1 + e^{−|l|})`.
pub fn bce_with_logits<T: Scalar>(logits: &Tensor<T>, target: f64) -> Result<Tensor<T>> {
    let t = T::lit(target);
    let n = logits.numel();
    let inv_n = T::lit(1.0 / n as f64);
    let loss: T = logits
        .data()
        .iter()
        .map(|&l| l.max(T::zero()) - l * t + (-l.abs()).exp().ln_1p())
        .sum::<T>()
        * inv_n;
    Tensor::from_op(
        vec![loss],
        &[],
        "bce_with_logits",
        vec![logits.clone()],
        Box::new(move |ctx| {
            let g = ctx.grad[0] * inv_n;
            let l = ctx.parents[0].data();
            let grad = l
                .iter()
                .map(|&li| (crate::tensor::sigmoid_value(li) - t) * g)
                .collect();
            vec![Some(grad)]
        }),
    )
}

/// Discriminator and generator losses of adversarial latent regularization.
/// `real` are logits on prior samples, `fake` logits on encoder samples.
/// The generator loss is the non-saturating form.
pub fn aae_losses<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let disc = bce_with_logits(real, 1.0)?.add(&bce_with_logits(fake, 0.0)?)?;
    let gen = bce_with_logits(fake, 1.0)?;
    Ok((disc, gen))
}

/// Fraction of prior samples classified real plus encoder samples classified
/// fake, thresholding logits at zero.
pub fn discriminator_accuracy<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> f64 {
    let hits = real.data().iter().filter(|&&l| l > T::zero()).count()
        + fake.data().iter().filter(|&&l| l <= T::zero()).count();
    hits as f64 / (real.numel() + fake.numel()) as f64
}
