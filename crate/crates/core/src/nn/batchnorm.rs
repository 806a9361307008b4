use std::cell::Cell;

use super::{Module, Parameter};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

/// Per-channel batch normalization over every axis except axis 1.
///
/// Training mode normalizes with batch statistics and folds them into the
/// running estimates (`running = 0.9 * running + 0.1 * batch`); eval mode
/// uses the running estimates only.
#[derive(Clone, Debug)]
pub struct BatchNorm<T: Scalar> {
    name: String,
    gamma: Parameter<T>,
    beta: Parameter<T>,
    running_mean: Parameter<T>,
    running_var: Parameter<T>,
    channels: usize,
    training: Cell<bool>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            name: name.to_string(),
            gamma: Parameter::new(format!("{name}.gamma"), vec![T::one(); channels], &[channels])?,
            beta: Parameter::new(format!("{name}.beta"), vec![T::zero(); channels], &[channels])?,
            running_mean: Parameter::buffer(
                format!("{name}.running_mean"),
                vec![T::zero(); channels],
                &[channels],
            )?,
            running_var: Parameter::buffer(
                format!("{name}.running_var"),
                vec![T::one(); channels],
                &[channels],
            )?,
            channels,
            training: Cell::new(true),
        })
    }

    pub fn set_training(&self, training: bool) {
        self.training.set(training);
    }

    pub fn is_training(&self) -> bool {
        self.training.get()
    }

    pub fn gamma(&self) -> &Parameter<T> {
        &self.gamma
    }

    pub fn beta(&self) -> &Parameter<T> {
        &self.beta
    }

    pub fn running_mean(&self) -> Vec<T> {
        self.running_mean.tensor().to_vec()
    }

    pub fn running_var(&self) -> Vec<T> {
        self.running_var.tensor().to_vec()
    }

    /// `x`: `[B, C, ...]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() < 2 || s[1] != self.channels {
            return Err(Error::ChannelMismatch {
                layer: self.name.clone(),
                expected: self.channels,
                actual: if s.len() >= 2 { s[1] } else { 0 },
            });
        }
        let (batch, c) = (s[0], self.channels);
        let inner: usize = s[2..].iter().product();
        let count = batch * inner;
        let eps = T::lit(BN_EPSILON);
        let training = self.training.get();
        if training && count < 2 {
            return Err(Error::BatchTooSmall {
                layer: self.name.clone(),
                count,
            });
        }

        let data = x.data();
        let index = move |b: usize, ch: usize, i: usize| (b * c + ch) * inner + i;

        let (mean, var) = if training {
            let n = T::lit(count as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut acc = T::zero();
                for b in 0..batch {
                    acc += data[index(b, ch, 0)..][..inner].iter().copied().sum();
                }
                mean[ch] = acc / n;
                let mut sq = T::zero();
                for b in 0..batch {
                    for &v in &data[index(b, ch, 0)..][..inner] {
                        let d = v - mean[ch];
                        sq += d * d;
                    }
                }
                var[ch] = sq / n;
            }
            let m = T::lit(BN_MOMENTUM);
            let unbias = T::lit(count as f64 / (count as f64 - 1.0));
            self.running_mean.tensor().update_data(|rm| {
                for (r, &bm) in rm.iter_mut().zip(&mean) {
                    *r = m * *r + (T::one() - m) * bm;
                }
            });
            self.running_var.tensor().update_data(|rv| {
                for (r, &bv) in rv.iter_mut().zip(&var) {
                    *r = m * *r + (T::one() - m) * bv * unbias;
                }
            });
            (mean, var)
        } else {
            (self.running_mean(), self.running_var())
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = self.gamma.tensor().to_vec();
        let beta = self.beta.tensor().to_vec();
        let mut xhat = vec![T::zero(); data.len()];
        let mut out = vec![T::zero(); data.len()];
        for b in 0..batch {
            for ch in 0..c {
                let off = index(b, ch, 0);
                for i in off..off + inner {
                    let xh = (data[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = gamma[ch] * xh + beta[ch];
                }
            }
        }
        drop(data);

        Tensor::from_op(
            out,
            x.shape(),
            "batchnorm",
            vec![x.clone(), self.gamma.tensor().clone(), self.beta.tensor().clone()],
            Box::new(move |ctx| {
                let g = ctx.grad;
                let gamma = ctx.parents[1].data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for b in 0..batch {
                    for ch in 0..c {
                        let off = index(b, ch, 0);
                        for i in off..off + inner {
                            dgamma[ch] += g[i] * xhat[i];
                            dbeta[ch] += g[i];
                        }
                    }
                }
                let gx = ctx.parents[0].requires_grad().then(|| {
                    let mut gx = vec![T::zero(); g.len()];
                    if training {
                        // dx = γ·invstd/n · (n·g − Σg − x̂·Σ(g·x̂))
                        let n = T::lit(count as f64);
                        for ch in 0..c {
                            let k = gamma[ch] * inv_std[ch] / n;
                            for b in 0..batch {
                                let off = index(b, ch, 0);
                                for i in off..off + inner {
                                    gx[i] = k * (n * g[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
                                }
                            }
                        }
                    } else {
                        for ch in 0..c {
                            let k = gamma[ch] * inv_std[ch];
                            for b in 0..batch {
                                let off = index(b, ch, 0);
                                for i in off..off + inner {
                                    gx[i] = k * g[i];
                                }
                            }
                        }
                    }
                    gx
                });
                vec![gx, Some(dgamma), Some(dbeta)]
            }),
        )
    }
}

impl<T: Scalar> Module<T> for BatchNorm<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        vec![self.gamma.clone(), self.beta.clone()]
    }

    fn buffers(&self) -> Vec<Parameter<T>> {
        vec![self.running_mean.clone(), self.running_var.clone()]
    }
}
