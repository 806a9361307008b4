use super::{uniform_init, Module, Parameter};
use crate::error::{Error, Result};
use crate::latent::NoiseSource;
use crate::tensor::{Scalar, Tensor};

/// Fully connected layer, `y = x·Wᵀ + b` with `W: [out, in]`.
#[derive(Clone, Debug)]
pub struct Dense<T: Scalar> {
    name: String,
    weight: Parameter<T>,
    bias: Parameter<T>,
    in_dim: usize,
    out_dim: usize,
}

impl<T: Scalar> Dense<T> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, noise: &mut NoiseSource) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self::with_data(
            name,
            in_dim,
            out_dim,
            uniform_init(noise, out_dim * in_dim, bound),
            vec![T::zero(); out_dim],
        )
    }

    pub fn with_data(name: &str, in_dim: usize, out_dim: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        Ok(Dense {
            name: name.to_string(),
            weight: Parameter::new(format!("{name}.weight"), weight, &[out_dim, in_dim])?,
            bias: Parameter::new(format!("{name}.bias"), bias, &[out_dim])?,
            in_dim,
            out_dim,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn weight(&self) -> &Parameter<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Parameter<T> {
        &self.bias
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `x`: `[B, in]` → `[B, out]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(x, self.weight.tensor(), self.bias.tensor())
    }

    /// Forward pass that treats the layer's own parameters as constants, so
    /// gradients reach `x` but never the layer.
    pub fn forward_frozen(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(x, &self.weight.tensor().detach(), &self.bias.tensor().detach())
    }

    fn apply(&self, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "dense",
                lhs: s.to_vec(),
                rhs: vec![self.out_dim, self.in_dim],
            });
        }
        x.matmul(&w.t()?)?.add(b)
    }
}

impl<T: Scalar> Module<T> for Dense<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}
