use super::{kaiming_bound, uniform_init, Module, Parameter};
use crate::error::{Error, Result};
use crate::latent::NoiseSource;
use crate::tensor::{dot, gemm_acc, transpose_data, Scalar, Tensor};

const K: usize = 3;

/// 3×3×3 transposed convolution with stride 2 that exactly doubles every
/// spatial dimension: input index `i` and tap `k` write output `2i + k - 1`.
#[derive(Clone, Debug)]
pub struct Deconv3d<T: Scalar> {
    name: String,
    weight: Parameter<T>,
    bias: Parameter<T>,
    in_ch: usize,
    out_ch: usize,
}

impl<T: Scalar> Deconv3d<T> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, noise: &mut NoiseSource) -> Result<Self> {
        // Each output voxel receives on average in_ch * 27 / 8 contributions.
        let bound = kaiming_bound(in_ch as f64 * 27.0 / 8.0);
        Ok(Deconv3d {
            name: name.to_string(),
            weight: Parameter::new(
                format!("{name}.weight"),
                uniform_init(noise, in_ch * out_ch * K * K * K, bound),
                &[in_ch, out_ch, K, K, K],
            )?,
            bias: Parameter::new(format!("{name}.bias"), vec![T::zero(); out_ch], &[out_ch])?,
            in_ch,
            out_ch,
        })
    }

    pub fn weight(&self) -> &Parameter<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Parameter<T> {
        &self.bias
    }

    /// Sets every bias entry; used to start the decoder output mostly empty.
    pub fn fill_bias(&self, v: f64) {
        self.bias.tensor().update_data(|b| b.iter_mut().for_each(|x| *x = T::lit(v)));
    }

    /// `x`: `[B, C, D, H, W]` → `[B, out_ch, 2D, 2H, 2W]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 5 || s[1] != self.in_ch {
            return Err(Error::ChannelMismatch {
                layer: self.name.clone(),
                expected: self.in_ch,
                actual: if s.len() == 5 { s[1] } else { 0 },
            });
        }
        let geom = Geometry {
            b: s[0],
            ic: self.in_ch,
            oc: self.out_ch,
            d: s[2],
            h: s[3],
            w: s[4],
        };
        let out = geom.forward(&x.data(), &self.weight.tensor().data(), &self.bias.tensor().data());
        Tensor::from_op(
            out,
            &[geom.b, geom.oc, 2 * geom.d, 2 * geom.h, 2 * geom.w],
            "deconv3d",
            vec![x.clone(), self.weight.tensor().clone(), self.bias.tensor().clone()],
            Box::new(move |ctx| geom.backward(ctx.grad, ctx.parents)),
        )
    }
}

impl<T: Scalar> Module<T> for Deconv3d<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    b: usize,
    ic: usize,
    oc: usize,
    d: usize,
    h: usize,
    w: usize,
}

/// First input index whose output `2i + k - 1` is non-negative.
fn first(k: usize) -> usize {
    usize::from(k == 0)
}

impl Geometry {
    fn in_vol(&self) -> usize {
        self.d * self.h * self.w
    }

    fn out_vol(&self) -> usize {
        8 * self.in_vol()
    }

    /// Calls `f(in_row, out_row, iw0, ow0, len)` for each input row of a tap:
    /// elements `in_row + iw0 + j` map to `out_row + ow0 + 2j` for `j < len`.
    fn for_each_row(&self, kd: usize, kh: usize, kw: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let (ow_, oh_) = (2 * self.w, 2 * self.h);
        let iw0 = first(kw);
        let ow0 = 2 * iw0 + kw - 1;
        let len = self.w - iw0;
        for id in first(kd)..self.d {
            let od = 2 * id + kd - 1;
            for ih in first(kh)..self.h {
                let oh = 2 * ih + kh - 1;
                f((id * self.h + ih) * self.w, (od * oh_ + oh) * ow_, iw0, ow0, len);
            }
        }
    }

    /// Calls `f(row, kd, kh, kw)` for each tap, `row` being its index within
    /// one output channel's block of the column matrix.
    fn taps(mut f: impl FnMut(usize, usize, usize, usize)) {
        for kd in 0..K {
            for kh in 0..K {
                for kw in 0..K {
                    f((kd * K + kh) * K + kw, kd, kh, kw);
                }
            }
        }
    }

    /// Per example: `col = Wᵀ · x` (`[O·27, V]`), then each column row is
    /// added into the output at its tap's positions.
    fn forward<T: Scalar>(&self, x: &[T], w: &[T], bias: &[T]) -> Vec<T> {
        let (iv, ov) = (self.in_vol(), self.out_vol());
        let rows = self.oc * K * K * K;
        let wt = transpose_data(w, self.ic, rows);
        let mut col = vec![T::zero(); rows * iv];
        let mut out = vec![T::zero(); self.b * self.oc * ov];
        for b in 0..self.b {
            col.iter_mut().for_each(|v| *v = T::zero());
            gemm_acc(&wt, &x[b * self.ic * iv..][..self.ic * iv], &mut col, rows, self.ic, iv);
            for o in 0..self.oc {
                let dst = &mut out[(b * self.oc + o) * ov..][..ov];
                dst.iter_mut().for_each(|v| *v = bias[o]);
                Self::taps(|t, kd, kh, kw| {
                    let src = &col[(o * K * K * K + t) * iv..][..iv];
                    self.for_each_row(kd, kh, kw, |ir, or, iw0, ow0, len| {
                        let drow = &mut dst[or + ow0..];
                        for (j, &sv) in src[ir + iw0..ir + iw0 + len].iter().enumerate() {
                            drow[2 * j] += sv;
                        }
                    });
                });
            }
        }
        out
    }

    /// Gathers the output gradient into column form, then
    /// `dx = W · gcol` and `dW += x · gcolᵀ`.
    fn backward<T: Scalar>(&self, g: &[T], parents: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let (px, pw, pb) = (&parents[0], &parents[1], &parents[2]);
        let x = px.data();
        let w = pw.data();
        let (iv, ov) = (self.in_vol(), self.out_vol());
        let rows = self.oc * K * K * K;
        let mut gx = px.requires_grad().then(|| vec![T::zero(); x.len()]);
        let mut gw = pw.requires_grad().then(|| vec![T::zero(); w.len()]);
        let mut gcol = vec![T::zero(); rows * iv];
        for b in 0..self.b {
            gcol.iter_mut().for_each(|v| *v = T::zero());
            for o in 0..self.oc {
                let go = &g[(b * self.oc + o) * ov..][..ov];
                Self::taps(|t, kd, kh, kw| {
                    let dst = &mut gcol[(o * K * K * K + t) * iv..][..iv];
                    self.for_each_row(kd, kh, kw, |ir, or, iw0, ow0, len| {
                        let grow = &go[or + ow0..];
                        for (j, d) in dst[ir + iw0..ir + iw0 + len].iter_mut().enumerate() {
                            *d = grow[2 * j];
                        }
                    });
                });
            }
            let xb = &x[b * self.ic * iv..][..self.ic * iv];
            if let Some(gx) = gx.as_mut() {
                gemm_acc(&w, &gcol, &mut gx[b * self.ic * iv..][..self.ic * iv], self.ic, rows, iv);
            }
            if let Some(gw) = gw.as_mut() {
                for c in 0..self.ic {
                    let xc = &xb[c * iv..][..iv];
                    for r in 0..rows {
                        gw[c * rows + r] += dot(xc, &gcol[r * iv..][..iv]);
                    }
                }
            }
        }
        let gb = pb.requires_grad().then(|| {
            let mut gb = vec![T::zero(); self.oc];
            for b in 0..self.b {
                for (o, acc) in gb.iter_mut().enumerate() {
                    *acc += g[(b * self.oc + o) * ov..][..ov].iter().copied().sum();
                }
            }
            gb
        });
        vec![gx, gw, gb]
    }
}

/// Crops the three trailing axes of `[B, C, S, S, S]` to `size` around the center.
pub fn center_crop3d<T: Scalar>(x: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let s = x.shape().to_vec();
    if s.len() != 5 || s[2] != s[3] || s[3] != s[4] || s[2] < size {
        return Err(Error::ShapeMismatch {
            op: "center_crop3d",
            lhs: s,
            rhs: vec![size, size, size],
        });
    }
    let full = s[2];
    if full == size {
        return Ok(x.clone());
    }
    let off = (full - size) / 2;
    let planes = s[0] * s[1];
    let (fv, cv) = (full * full * full, size * size * size);
    let src_index = move |p: usize, d: usize, h: usize, w: usize| {
        p * fv + ((d + off) * full + h + off) * full + w + off
    };
    let mut out = Vec::with_capacity(planes * cv);
    {
        let data = x.data();
        for p in 0..planes {
            for d in 0..size {
                for h in 0..size {
                    let start = src_index(p, d, h, 0);
                    out.extend_from_slice(&data[start..start + size]);
                }
            }
        }
    }
    let input_len = x.numel();
    Tensor::from_op(
        out,
        &[s[0], s[1], size, size, size],
        "center_crop3d",
        vec![x.clone()],
        Box::new(move |ctx| {
            let mut gx = vec![T::zero(); input_len];
            let mut k = 0;
            for p in 0..planes {
                for d in 0..size {
                    for h in 0..size {
                        let start = src_index(p, d, h, 0);
                        gx[start..start + size].copy_from_slice(&ctx.grad[k..k + size]);
                        k += size;
                    }
                }
            }
            vec![Some(gx)]
        }),
    )
}
