//! Central-difference gradient checking at 64-bit precision.

use super::Tensor;
use crate::error::{Error, Result};

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn eval_scalar(out: Result<Tensor<f64>>) -> Result<f64> {
    let out = out?;
    if out.numel() != 1 {
        return Err(Error::NonScalarLoss(out.shape().to_vec()));
    }
    Ok(out.item())
}

/// Max over coordinates of `|analytic - central difference| / max(1, |analytic|)`
/// for a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &[f64], shape: &[usize], h: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let input = Tensor::parameter(x.to_vec(), shape)?;
    grad_check_params(|| f(&input), std::slice::from_ref(&input), h)
}

/// Same as [`grad_check`] but perturbs every element of each tensor in
/// `params` in place while `f` reads them.
pub fn grad_check_params<F>(f: F, params: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    let first = eval_scalar(Ok(loss.clone()))?;
    let second = eval_scalar(f())?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    loss.backward()?;
    drop(loss);

    let mut worst = 0.0f64;
    for p in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = p.data()[i];
            p.update_data(|d| d[i] = orig + h);
            let plus = eval_scalar(f())?;
            p.update_data(|d| d[i] = orig - h);
            let minus = eval_scalar(f())?;
            p.update_data(|d| d[i] = orig);
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(a, numeric));
        }
        p.zero_grad();
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn square_at_three() {
        let err = grad_check(|x| Ok(x.square().sum_all()), &[3.0], &[1], DEFAULT_STEP).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // Forward is x^2 but the recorded backward claims 3x.
        let bad = |x: &Tensor<f64>| {
            let data = x.data().iter().map(|v| v * v).collect();
            Tensor::from_op(
                data,
                x.shape(),
                "bad",
                vec![x.clone()],
                Box::new(|ctx| {
                    let xs = ctx.parents[0].data();
                    vec![Some(xs.iter().zip(ctx.grad).map(|(x, g)| 3.0 * x * g).collect())]
                }),
            )
            .map(|t| t.sum_all())
        };
        let err = grad_check(bad, &[2.0], &[1], DEFAULT_STEP).unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn rejects_non_deterministic_function() {
        let counter = Cell::new(0.0);
        let f = |x: &Tensor<f64>| {
            counter.set(counter.get() + 1.0);
            Ok(x.sum_all().add_scalar(counter.get()))
        };
        assert!(matches!(
            grad_check(f, &[1.0], &[1], DEFAULT_STEP),
            Err(Error::NonDeterministic { .. })
        ));
    }
}
