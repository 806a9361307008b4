//! Layers used by the encoder, decoder, texturizer and discriminators.

mod batchnorm;
mod conv2d;
mod deconv3d;
mod dense;

pub use batchnorm::BatchNorm;
pub use conv2d::{conv2d_output_size, Conv2d};
pub use deconv3d::{center_crop3d, Deconv3d};
pub use dense::Dense;

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::latent::NoiseSource;
use crate::tensor::{Scalar, Tensor};

/// Leaky ReLU negative slope used by every hidden layer.
pub const LEAKY_SLOPE: f64 = 0.2;

/// A named tensor owned by a layer. Trainable parameters require gradients;
/// buffers such as batchnorm running statistics do not.
#[derive(Clone, Debug)]
pub struct Parameter<T: Scalar> {
    name: String,
    tensor: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Ok(Parameter {
            name: name.into(),
            tensor: Tensor::parameter(data, shape)?,
        })
    }

    pub fn buffer(name: impl Into<String>, data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Ok(Parameter {
            name: name.into(),
            tensor: Tensor::new(data, shape)?,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn is_trainable(&self) -> bool {
        self.tensor.requires_grad()
    }
}

/// Anything that owns parameters.
pub trait Module<T: Scalar> {
    fn parameters(&self) -> Vec<Parameter<T>>;

    /// Non-trainable state that must survive a checkpoint round trip.
    fn buffers(&self) -> Vec<Parameter<T>> {
        Vec::new()
    }

    fn zero_grad(&self) {
        for p in self.parameters() {
            p.tensor().zero_grad();
        }
    }
}

/// Checks that no two entries share a name.
pub fn ensure_unique<T: Scalar>(params: &[Parameter<T>]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for p in params {
        if !seen.insert(p.name()) {
            return Err(Error::DuplicateParam(p.name().to_string()));
        }
    }
    Ok(())
}

/// Kaiming-uniform bound for a leaky-ReLU layer with the given fan-in.
pub(crate) fn kaiming_bound(fan_in: f64) -> f64 {
    (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt()
}

pub(crate) fn uniform_init<T: Scalar>(noise: &mut NoiseSource, n: usize, bound: f64) -> Vec<T> {
    noise
        .uniform_vec(n, -bound, bound)
        .into_iter()
        .map(T::lit)
        .collect()
}
