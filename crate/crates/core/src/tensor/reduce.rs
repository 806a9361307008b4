use super::{numel, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Maps each flat input index to its flat index in the reduced output.
fn reduction_map(shape: &[usize], reduced: &[bool]) -> Vec<usize> {
    let rank = shape.len();
    let mut out_strides = vec![0usize; rank];
    let mut acc = 1;
    for ax in (0..rank).rev() {
        if !reduced[ax] {
            out_strides[ax] = acc;
            acc *= shape[ax];
        }
    }
    let mut map = Vec::with_capacity(numel(shape));
    let mut idx = vec![0usize; rank];
    let mut o = 0usize;
    for _ in 0..numel(shape) {
        map.push(o);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            o += out_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            o -= out_strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    map
}

impl<T: Scalar> Tensor<T> {
    /// Reduces over `axes`, dropping them from the shape.
    pub fn reduce(&self, op: Reduction, axes: &[usize]) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        let rank = shape.len();
        let mut reduced = vec![false; rank];
        for &ax in axes {
            if ax >= rank || reduced[ax] {
                return Err(Error::InvalidAxis {
                    op: "reduce",
                    axis: ax,
                    rank,
                });
            }
            reduced[ax] = true;
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let count: usize = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&d, _)| d)
            .product();

        let map = reduction_map(&shape, &reduced);
        let mut out = vec![T::zero(); numel(&out_shape)];
        for (&v, &o) in self.data().iter().zip(&map) {
            out[o] += v;
        }
        let scale = match op {
            Reduction::Sum => T::one(),
            Reduction::Mean => T::one() / T::lit(count as f64),
        };
        if op == Reduction::Mean {
            let n = T::lit(count as f64);
            out.iter_mut().for_each(|v| *v /= n);
        }

        Tensor::from_op(
            out,
            &out_shape,
            match op {
                Reduction::Sum => "sum",
                Reduction::Mean => "mean",
            },
            vec![self.clone()],
            Box::new(move |ctx| {
                let g = map.iter().map(|&o| ctx.grad[o] * scale).collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn sum(&self, axes: &[usize]) -> Result<Tensor<T>> {
        self.reduce(Reduction::Sum, axes)
    }

    pub fn mean(&self, axes: &[usize]) -> Result<Tensor<T>> {
        self.reduce(Reduction::Mean, axes)
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.reduce(Reduction::Sum, &axes).expect("all axes valid")
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.reduce(Reduction::Mean, &axes).expect("all axes valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_over_rows() {
        let a = Tensor::<f64>::from_f64(&[1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let s = a.sum(&[0]).unwrap();
        assert_eq!(s.shape(), &[2]);
        assert_eq!(s.to_vec(), vec![4.0, 6.0]);
        assert_eq!(a.sum(&[1]).unwrap().to_vec(), vec![3.0, 7.0]);
    }

    #[test]
    fn mean_of_two() {
        let a = Tensor::<f64>::from_f64(&[2.0, 4.0], &[2]).unwrap();
        assert_eq!(a.mean_all().item(), 3.0);
    }

    #[test]
    fn sum_backward_is_ones() {
        let a = Tensor::<f64>::parameter(vec![0.3, -1.2], &[2]).unwrap();
        a.sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn mean_backward_scales_by_count() {
        let a = Tensor::<f64>::parameter(vec![0.0; 6], &[2, 3]).unwrap();
        a.mean(&[1]).unwrap().sum_all().backward().unwrap();
        for g in a.grad().unwrap() {
            assert!((g - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn middle_axis_of_rank_three() {
        let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let a = Tensor::<f64>::from_f64(&data, &[2, 3, 4]).unwrap();
        let s = a.sum(&[1]).unwrap();
        assert_eq!(s.shape(), &[2, 4]);
        // out[i, k] = sum_j a[i, j, k]
        for i in 0..2 {
            for k in 0..4 {
                let expected: f64 = (0..3).map(|j| data[i * 12 + j * 4 + k]).sum();
                assert_eq!(s.to_vec()[i * 4 + k], expected);
            }
        }
    }

    #[test]
    fn invalid_axis() {
        let a = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(a.sum(&[2]), Err(Error::InvalidAxis { axis: 2, .. })));
        assert!(matches!(a.sum(&[0, 0]), Err(Error::InvalidAxis { .. })));
    }
}
