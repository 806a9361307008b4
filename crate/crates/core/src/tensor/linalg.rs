use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `out[m×n] += a[m×k] · b[k×n]`, row-major.
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

pub(crate) fn transpose_data<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

impl<T: Scalar> Tensor<T> {
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (ls, rs) = (self.shape(), other.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(Error::InnerDimension {
                lhs: ls.to_vec(),
                rhs: rs.to_vec(),
            });
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_acc(&self.data(), &other.data(), &mut out, m, k, n);
        Tensor::from_op(
            out,
            &[m, n],
            "matmul",
            vec![self.clone(), other.clone()],
            Box::new(move |ctx| {
                let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
                // dA = dC · Bᵀ
                let ga = pa.requires_grad().then(|| {
                    let bt = transpose_data(&pb.data(), k, n);
                    let mut ga = vec![T::zero(); m * k];
                    gemm_acc(ctx.grad, &bt, &mut ga, m, n, k);
                    ga
                });
                // dB = Aᵀ · dC
                let gb = pb.requires_grad().then(|| {
                    let at = transpose_data(&pa.data(), m, k);
                    let mut gb = vec![T::zero(); k * n];
                    gemm_acc(&at, ctx.grad, &mut gb, k, m, n);
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    /// Transpose of a matrix.
    pub fn t(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::InvalidAxis {
                op: "transpose",
                axis: 1,
                rank: s.len(),
            });
        }
        let (r, c) = (s[0], s[1]);
        let data = transpose_data(&self.data(), r, c);
        Tensor::from_op(
            data,
            &[c, r],
            "transpose",
            vec![self.clone()],
            Box::new(move |ctx| vec![Some(transpose_data(ctx.grad, c, r))]),
        )
    }
}
