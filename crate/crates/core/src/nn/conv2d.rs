use super::{kaiming_bound, uniform_init, Module, Parameter};
use crate::error::{Error, Result};
use crate::latent::NoiseSource;
use crate::tensor::{dot, gemm_acc, transpose_data, Scalar, Tensor};

const K: usize = 3;
const STRIDE: usize = 2;

/// Output size and leading pad of a stride-2, 3-tap "same" convolution.
pub fn conv2d_output_size(input: usize) -> (usize, usize) {
    let out = input.div_ceil(STRIDE);
    let total_pad = ((out - 1) * STRIDE + K).saturating_sub(input);
    (out, total_pad / 2)
}

/// 3×3 stride-2 convolution with "same" zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar> {
    name: String,
    weight: Parameter<T>,
    bias: Parameter<T>,
    in_ch: usize,
    out_ch: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, noise: &mut NoiseSource) -> Result<Self> {
        let bound = kaiming_bound((in_ch * K * K) as f64);
        Ok(Conv2d {
            name: name.to_string(),
            weight: Parameter::new(
                format!("{name}.weight"),
                uniform_init(noise, out_ch * in_ch * K * K, bound),
                &[out_ch, in_ch, K, K],
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

    /// `x`: `[B, C, H, W]` → `[B, out_ch, ⌈H/2⌉, ⌈W/2⌉]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_ch {
            return Err(Error::ChannelMismatch {
                layer: self.name.clone(),
                expected: self.in_ch,
                actual: if s.len() == 4 { s[1] } else { 0 },
            });
        }
        let geom = Geometry::new(s[0], self.in_ch, self.out_ch, s[2], s[3]);
        let (out, cols) = geom.forward(&x.data(), &self.weight.tensor().data(), &self.bias.tensor().data());
        Tensor::from_op(
            out,
            &[geom.b, geom.oc, geom.oh, geom.ow],
            "conv2d",
            vec![x.clone(), self.weight.tensor().clone(), self.bias.tensor().clone()],
            Box::new(move |ctx| geom.backward(ctx.grad, &cols, ctx.parents)),
        )
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn parameters(&self) -> Vec<Parameter<T>> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    b: usize,
    ic: usize,
    oc: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    pad_h: usize,
    pad_w: usize,
}

impl Geometry {
    fn new(b: usize, ic: usize, oc: usize, h: usize, w: usize) -> Self {
        let (oh, pad_h) = conv2d_output_size(h);
        let (ow, pad_w) = conv2d_output_size(w);
        Geometry {
            b,
            ic,
            oc,
            h,
            w,
            oh,
            ow,
            pad_h,
            pad_w,
        }
    }

    /// Input coordinate for output `o` and tap `k`, if inside the image.
    fn src(o: usize, k: usize, pad: usize, size: usize) -> Option<usize> {
        let i = (o * STRIDE + k).checked_sub(pad)?;
        (i < size).then_some(i)
    }

    /// Calls `f(out_offset, in_offset)` for each valid (output, tap) pair of a
    /// single channel plane.
    fn for_each_tap(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize)) {
        for oy in 0..self.oh {
            let Some(iy) = Self::src(oy, ky, self.pad_h, self.h) else {
                continue;
            };
            for ox in 0..self.ow {
                if let Some(ix) = Self::src(ox, kx, self.pad_w, self.w) {
                    f(oy * self.ow + ox, iy * self.w + ix);
                }
            }
        }
    }

    fn col_rows(&self) -> usize {
        self.ic * K * K
    }

    /// Column matrix of one example: row `(c, ky, kx)` holds, for every
    /// output pixel, the input value under that tap (zero in the padding).
    fn im2col<T: Scalar>(&self, xb: &[T], col: &mut [T]) {
        let (in_plane, out_plane) = (self.h * self.w, self.oh * self.ow);
        col.iter_mut().for_each(|v| *v = T::zero());
        for c in 0..self.ic {
            let src = &xb[c * in_plane..][..in_plane];
            for ky in 0..K {
                for kx in 0..K {
                    let dst = &mut col[((c * K + ky) * K + kx) * out_plane..][..out_plane];
                    self.for_each_tap(ky, kx, |oi, ii| dst[oi] = src[ii]);
                }
            }
        }
    }

    /// Returns the output and the column matrices of every example.
    fn forward<T: Scalar>(&self, x: &[T], w: &[T], bias: &[T]) -> (Vec<T>, Vec<T>) {
        let (in_plane, out_plane) = (self.h * self.w, self.oh * self.ow);
        let rows = self.col_rows();
        let mut cols = vec![T::zero(); self.b * rows * out_plane];
        let mut out = vec![T::zero(); self.b * self.oc * out_plane];
        for b in 0..self.b {
            let col = &mut cols[b * rows * out_plane..][..rows * out_plane];
            self.im2col(&x[b * self.ic * in_plane..][..self.ic * in_plane], col);
            let dst = &mut out[b * self.oc * out_plane..][..self.oc * out_plane];
            for (o, plane) in dst.chunks_exact_mut(out_plane).enumerate() {
                plane.iter_mut().for_each(|v| *v = bias[o]);
            }
            gemm_acc(w, col, dst, self.oc, rows, out_plane);
        }
        (out, cols)
    }

    fn backward<T: Scalar>(&self, g: &[T], cols: &[T], parents: &[Tensor<T>]) -> Vec<Option<Vec<T>>> {
        let (px, pw, pb) = (&parents[0], &parents[1], &parents[2]);
        let w = pw.data();
        let (in_plane, out_plane) = (self.h * self.w, self.oh * self.ow);
        let rows = self.col_rows();
        let mut gx = px.requires_grad().then(|| vec![T::zero(); px.numel()]);
        let mut gw = pw.requires_grad().then(|| vec![T::zero(); w.len()]);
        let wt = transpose_data(&w, self.oc, rows);
        let mut gcol = vec![T::zero(); rows * out_plane];
        for b in 0..self.b {
            let gb = &g[b * self.oc * out_plane..][..self.oc * out_plane];
            if let Some(gw) = gw.as_mut() {
                let col = &cols[b * rows * out_plane..][..rows * out_plane];
                for o in 0..self.oc {
                    let go = &gb[o * out_plane..][..out_plane];
                    for r in 0..rows {
                        gw[o * rows + r] += dot(go, &col[r * out_plane..][..out_plane]);
                    }
                }
            }
            if let Some(gx) = gx.as_mut() {
                gcol.iter_mut().for_each(|v| *v = T::zero());
                gemm_acc(&wt, gb, &mut gcol, rows, self.oc, out_plane);
                let dst = &mut gx[b * self.ic * in_plane..][..self.ic * in_plane];
                for c in 0..self.ic {
                    let plane = &mut dst[c * in_plane..][..in_plane];
                    for ky in 0..K {
                        for kx in 0..K {
                            let src = &gcol[((c * K + ky) * K + kx) * out_plane..][..out_plane];
                            self.for_each_tap(ky, kx, |oi, ii| plane[ii] += src[oi]);
                        }
                    }
                }
            }
        }
        let gb = pb.requires_grad().then(|| {
            let mut gb = vec![T::zero(); self.oc];
            for b in 0..self.b {
                for (o, acc) in gb.iter_mut().enumerate() {
                    *acc += g[(b * self.oc + o) * out_plane..][..out_plane].iter().copied().sum();
                }
            }
            gb
        });
        vec![gx, gw, gb]
    }
}
