//! Finite-difference checks of every differentiable operation at 64-bit.

use std::f64::consts::PI;

use crate::azimuth::{azimuth_kl, AzimuthMode, AzimuthPosterior};
use crate::error::Result;
use crate::latent::{
    aae_losses, bce_with_logits, kl_standard_normal, mu_regularizer, recon_two_term, reparameterize_with,
    GaussianLatent, NoiseSource,
};
use crate::model::{ArchPreset, Model, ModelConfig, Objective};
use crate::nn::{center_crop3d, BatchNorm, Conv2d, Deconv3d, Dense, Module, Parameter};
use crate::render::{project, render, rotate_voxels, Sampling};
use crate::tensor::gradcheck::{grad_check_params, DEFAULT_STEP};
use crate::tensor::Tensor;

/// Largest accepted `|analytic − numeric| / max(1, |analytic|)`.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub name: String,
    pub max_rel_err: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOLERANCE
    }
}

struct Suite {
    noise: NoiseSource,
    cases: Vec<GradCase>,
}

impl Suite {
    fn leaf(&mut self, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor<f64>> {
        let n = shape.iter().product();
        Tensor::parameter(self.noise.uniform_vec(n, lo, hi), shape)
    }

    /// Fixed random weights so the probe `Σ r ⊙ y` has no symmetric gradient.
    fn probe(&mut self, shape: &[usize]) -> Result<Tensor<f64>> {
        let n = shape.iter().product();
        Tensor::new(self.noise.uniform_vec(n, -1.0, 1.0), shape)
    }

    fn check<F>(&mut self, name: &str, params: &[Tensor<f64>], f: F) -> Result<()>
    where
        F: Fn() -> Result<Tensor<f64>>,
    {
        let max_rel_err = grad_check_params(f, params, DEFAULT_STEP)?;
        self.cases.push(GradCase {
            name: name.to_string(),
            max_rel_err,
        });
        Ok(())
    }

    /// Checks `Σ r ⊙ op(inputs)` against every input and parameter.
    fn check_op<F>(&mut self, name: &str, params: &[Tensor<f64>], out_shape: &[usize], op: F) -> Result<()>
    where
        F: Fn() -> Result<Tensor<f64>>,
    {
        let r = self.probe(out_shape)?;
        self.check(name, params, || Ok(op()?.mul(&r)?.sum_all()))
    }
}

fn tensors(params: &[Parameter<f64>]) -> Vec<Tensor<f64>> {
    params.iter().map(|p| p.tensor().clone()).collect()
}

fn with_inputs(mut params: Vec<Tensor<f64>>, inputs: &[&Tensor<f64>]) -> Vec<Tensor<f64>> {
    params.extend(inputs.iter().map(|t| (*t).clone()));
    params
}

/// Runs every case; returns one entry per case in a fixed order.
pub fn run_gradient_suite(seed: u64) -> Result<Vec<GradCase>> {
    let mut s = Suite {
        noise: NoiseSource::new(seed),
        cases: Vec::new(),
    };
    elementwise_cases(&mut s)?;
    layer_cases(&mut s)?;
    render_cases(&mut s)?;
    loss_cases(&mut s)?;
    model_cases(&mut s, seed)?;
    Ok(s.cases)
}

fn elementwise_cases(s: &mut Suite) -> Result<()> {
    let a = s.leaf(&[3, 4], -2.0, 2.0)?;
    let b = s.leaf(&[1, 4], 0.5, 2.0)?;
    let pos = s.leaf(&[3, 4], 0.2, 3.0)?;
    let p = [a.clone()];
    s.check_op("leaky_relu", &p, &[3, 4], || Ok(a.leaky_relu(0.2)))?;
    s.check_op("sigmoid", &p, &[3, 4], || Ok(a.sigmoid()))?;
    s.check_op("tanh", &p, &[3, 4], || Ok(a.tanh()))?;
    s.check_op("exp", &p, &[3, 4], || Ok(a.exp()))?;
    s.check_op("square", &p, &[3, 4], || Ok(a.square()))?;
    s.check_op("affine_scalar", &p, &[3, 4], || Ok(a.mul_scalar(-1.5).add_scalar(0.3).neg()))?;
    s.check_op("log", std::slice::from_ref(&pos), &[3, 4], || Ok(pos.log()))?;
    let ab = [a.clone(), b.clone()];
    s.check_op("add_broadcast", &ab, &[3, 4], || a.add(&b))?;
    s.check_op("sub_broadcast", &ab, &[3, 4], || a.sub(&b))?;
    s.check_op("mul_broadcast", &ab, &[3, 4], || a.mul(&b))?;
    s.check_op("div_broadcast", &ab, &[3, 4], || a.div(&b))?;
    let m = s.leaf(&[4, 2], -1.0, 1.0)?;
    s.check_op("matmul", &[a.clone(), m.clone()], &[3, 2], || a.matmul(&m))?;
    s.check_op("transpose", &p, &[4, 3], || a.t())?;
    let v = s.leaf(&[2, 3, 4], -1.0, 1.0)?;
    let pv = [v.clone()];
    s.check_op("sum_axes", &pv, &[3], || v.sum(&[0, 2]))?;
    s.check_op("mean_axes", &pv, &[2, 4], || v.mean(&[1]))?;
    s.check_op("reshape", &pv, &[6, 4], || v.reshape(&[6, 4]))?;
    s.check("sum_all", &pv, || Ok(v.square().sum_all()))?;
    s.check("mean_all", &pv, || Ok(v.square().mean_all()))
}

fn layer_cases(s: &mut Suite) -> Result<()> {
    let dense = Dense::<f64>::new("dense", 3, 4, &mut s.noise)?;
    let x = s.leaf(&[2, 3], -1.0, 1.0)?;
    s.check_op("dense", &with_inputs(tensors(&dense.parameters()), &[&x]), &[2, 4], || dense.forward(&x))?;

    let conv = Conv2d::<f64>::new("conv", 2, 3, &mut s.noise)?;
    let x = s.leaf(&[2, 2, 5, 6], -1.0, 1.0)?;
    s.check_op("conv2d", &with_inputs(tensors(&conv.parameters()), &[&x]), &[2, 3, 3, 3], || conv.forward(&x))?;

    let deconv = Deconv3d::<f64>::new("deconv", 2, 2, &mut s.noise)?;
    let x = s.leaf(&[2, 2, 2, 2, 2], -1.0, 1.0)?;
    s.check_op(
        "deconv3d",
        &with_inputs(tensors(&deconv.parameters()), &[&x]),
        &[2, 2, 4, 4, 4],
        || deconv.forward(&x),
    )?;

    let x = s.leaf(&[2, 1, 5, 5, 5], -1.0, 1.0)?;
    s.check_op("center_crop3d", std::slice::from_ref(&x), &[2, 1, 3, 3, 3], || center_crop3d(&x, 3))?;

    let bn = BatchNorm::<f64>::new("bn", 3)?;
    bn.gamma().tensor().set_data(s.noise.uniform_vec(3, 0.5, 1.5))?;
    bn.beta().tensor().set_data(s.noise.uniform_vec(3, -0.5, 0.5))?;
    let x = s.leaf(&[3, 3, 2, 2], -1.0, 1.0)?;
    let params = with_inputs(tensors(&bn.parameters()), &[&x]);
    s.check_op("batchnorm_4d", &params, &[3, 3, 2, 2], || bn.forward(&x))?;
    let x = s.leaf(&[4, 3], -1.0, 1.0)?;
    let params = with_inputs(tensors(&bn.parameters()), &[&x]);
    s.check_op("batchnorm_2d", &params, &[4, 3], || bn.forward(&x))
}

fn render_cases(s: &mut Suite) -> Result<()> {
    let n = 4;
    let v = s.leaf(&[2, n, n, n], 0.0, 1.0)?;
    s.check_op("projection", std::slice::from_ref(&v), &[2, n, n], || project(&v))?;

    let theta = s.leaf(&[2], -PI, PI)?;
    let phi = s.leaf(&[2], -0.6, 0.6)?;
    let params = [v.clone(), theta.clone(), phi.clone()];
    s.check_op("rotate_trilinear", &params, &[2, n, n, n], || {
        rotate_voxels(&v, &theta, &phi, Sampling::Trilinear)
    })?;
    s.check_op("rotate_nearest", std::slice::from_ref(&v), &[2, n, n, n], || {
        rotate_voxels(&v, &theta.detach(), &phi.detach(), Sampling::Nearest)
    })?;
    s.check_op("render_trilinear", &params, &[2, n, n], || {
        render(&v, &theta, &phi, Sampling::Trilinear)
    })?;

    let single = s.leaf(&[1, n, n, n], 0.0, 1.0)?;
    let params = [single.clone(), theta.clone(), phi.clone()];
    s.check_op("render_broadcast", &params, &[2, n, n], || {
        render(&single, &theta, &phi, Sampling::Trilinear)
    })
}

fn loss_cases(s: &mut Suite) -> Result<()> {
    let mu = s.leaf(&[3, 2], -1.0, 1.0)?;
    let ls = s.leaf(&[3, 2], -1.0, 0.5)?;
    let lat = GaussianLatent::new(mu.clone(), ls.clone())?;
    let params = [mu.clone(), ls.clone()];
    s.check("kl_standard_normal", &params, || kl_standard_normal(&lat))?;
    let eps = s.probe(&[3, 2])?;
    s.check_op("reparameterize", &params, &[3, 2], || reparameterize_with(&lat, &eps))?;
    let z = s.leaf(&[4, 2], -1.0, 1.0)?;
    s.check("mu_regularizer", std::slice::from_ref(&z), || mu_regularizer(&z))?;

    let x = s.probe(&[2, 3, 3])?;
    let proj = s.leaf(&[2, 3, 3], 0.0, 1.0)?;
    let tex = s.leaf(&[2, 3, 3], 0.0, 1.0)?;
    s.check("recon_two_term", &[proj.clone(), tex.clone()], || {
        recon_two_term(&x, &proj, Some(&tex))
    })?;

    let logits = s.leaf(&[5, 1], -3.0, 3.0)?;
    s.check("bce_real", std::slice::from_ref(&logits), || bce_with_logits(&logits, 1.0))?;
    s.check("bce_fake", std::slice::from_ref(&logits), || bce_with_logits(&logits, 0.0))?;
    let fake = s.leaf(&[5, 1], -3.0, 3.0)?;
    let params = [logits.clone(), fake.clone()];
    s.check("aae_disc_loss", &params, || Ok(aae_losses(&logits, &fake)?.0))?;
    s.check("aae_gen_loss", &params, || Ok(aae_losses(&logits, &fake)?.1))?;

    let post = AzimuthPosterior::<f64>::new(&mut s.noise)?;
    post.mu().tensor().set_data(vec![0.3])?;
    post.log_sigma().tensor().set_data(vec![-0.4])?;
    let params = tensors(&post.parameters());
    s.check("azimuth_kl", &params, || azimuth_kl(&post))?;
    let noise_seed = s.noise.below(1 << 30) as u64;
    s.check_op("azimuth_head", &params, &[4], || {
        Ok(post.sample(&mut NoiseSource::new(noise_seed), 4)?.1)
    })
}

fn toy_config(objective: Objective, azimuth: AzimuthMode, seed: u64) -> ModelConfig {
    ModelConfig {
        arch: ArchPreset::Toy,
        seed,
        decoder_bias: 0.0,
        ..ModelConfig::new(objective, azimuth)
    }
}

fn model_cases(s: &mut Suite, seed: u64) -> Result<()> {
    let (b, res) = (3, 4);
    let x = Tensor::<f64>::new(s.noise.uniform_vec(b * res * res, 0.0, 1.0), &[b, res, res])?;
    let mut configs = vec![
        ("model_vae_fixed", toy_config(Objective::Vae, AzimuthMode::Fixed, seed)),
        ("model_beta_vae_uniform", toy_config(Objective::BetaVae, AzimuthMode::Uniform, seed)),
        ("model_mu_vae_latent_texturizer", ModelConfig {
            texturizer: true,
            ..toy_config(Objective::MuVae, AzimuthMode::Latent, seed)
        }),
        ("model_vae_latent", toy_config(Objective::Vae, AzimuthMode::Latent, seed)),
        ("model_aae_fixed", toy_config(Objective::Aae, AzimuthMode::Fixed, seed)),
        ("model_aae_encoder_uniform", ModelConfig {
            sampling: Sampling::Trilinear,
            ..toy_config(Objective::Aae, AzimuthMode::EncoderUniform, seed)
        }),
    ];
    for (name, config) in configs.drain(..) {
        let model = Model::<f64>::new(config)?;
        let stream = s.noise.below(1 << 30) as u64;
        let run = || model.forward(&x, &mut NoiseSource::new(stream));
        let mut trained = tensors(&model.main_parameters());
        trained.extend(tensors(&model.azimuth_parameters()));
        s.check(name, &trained, || Ok(run()?.total))?;
        let disc = tensors(&model.disc_parameters());
        if !disc.is_empty() {
            s.check(&format!("{name}_discriminator"), &disc, || {
                Ok(run()?.disc_loss.expect("aae has a discriminator loss"))
            })?;
        }
    }
    Ok(())
}
