//! Finite-difference validation of recorded gradients.
//!
//! The oracle evaluates the function twice per coordinate and never touches
//! the backward pass, so a broken gradient rule cannot hide from it.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// A differentiable scalar function of one tensor, expressed as graph
/// construction. Fresh graphs are handed in on every evaluation.
pub trait ScalarFn: FnMut(&mut Graph<f64>, Var) -> Result<Var> {}
impl<F: FnMut(&mut Graph<f64>, Var) -> Result<Var>> ScalarFn for F {}

fn eval_scalar(f: &mut impl ScalarFn, x: &Tensor<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let out = f(&mut g, v)?;
    if g.values(out).len() != 1 {
        return Err(Error::contract(format!(
            "gradient check requires a scalar function, got shape {:?}",
            g.shape(out)
        )));
    }
    Ok(g.values(out)[0])
}

/// Central-difference gradient of `f` at `x`: one coordinate at a time,
/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn fd_gradient(mut f: impl ScalarFn, x: &Tensor<f64>, eps: f64) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; x.numel()];
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let base = probe.values[i];
        probe.values[i] = base + eps;
        let hi = eval_scalar(&mut f, &probe)?;
        probe.values[i] = base - eps;
        let lo = eval_scalar(&mut f, &probe)?;
        probe.values[i] = base;
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    Ok(grad)
}

/// Gradient of `f` at `x` as reported by the reverse pass.
pub fn analytic_gradient(mut f: impl ScalarFn, x: &Tensor<f64>) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let v = g.leaf(x.clone().with_grad());
    let out = f(&mut g, v)?;
    if g.values(out).len() != 1 {
        return Err(Error::contract(format!(
            "gradient check requires a scalar function, got shape {:?}",
            g.shape(out)
        )));
    }
    g.backward(out)?;
    Ok(g.grad(v).expect("leaf registered with gradient").to_vec())
}

/// Largest relative disagreement between the two gradients,
/// `|analytic - fd| / max(1, |fd|)` over all coordinates.
pub fn max_rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &f)| (a - f).abs() / f.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Checks the recorded gradient of `f` at `x` against central differences
/// with step `eps` and returns the worst relative error.
pub fn grad_check(mut f: impl ScalarFn, x: &Tensor<f64>, eps: f64) -> Result<f64> {
    let analytic = analytic_gradient(&mut f, x)?;
    let fd = fd_gradient(&mut f, x, eps)?;
    Ok(max_rel_err(&analytic, &fd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_wrong_rule_fails() {
        let x = Tensor::new(vec![4], vec![0.7, -1.3, 2.1, 0.4]).unwrap();
        let square = |g: &mut Graph<f64>, v: Var| {
            let sq = g.mul(v, v)?;
            Ok(g.sum(sq))
        };
        let err = grad_check(square, &x, 1e-5).unwrap();
        assert!(err < 1e-6, "square gradient off by {err}");

        // A deliberately wrong rule: pretend d/dx sum(x^2) were 3x^2 by
        // checking the cube's analytic gradient against the square's.
        let cube = |g: &mut Graph<f64>, v: Var| {
            let sq = g.mul(v, v)?;
            let cu = g.mul(sq, v)?;
            Ok(g.sum(cu))
        };
        let wrong = analytic_gradient(cube, &x).unwrap();
        let fd = fd_gradient(square, &x, 1e-5).unwrap();
        assert!(max_rel_err(&wrong, &fd) > 1e-2);
    }

    #[test]
    fn non_scalar_function_is_rejected() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let identity = |_: &mut Graph<f64>, v: Var| Ok(v);
        assert!(matches!(grad_check(identity, &x, 1e-5), Err(Error::Contract(_))));
    }
}
