//! Finite-difference validation of reverse-mode gradients.

use crate::error::{Result, SageError};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares the analytic gradient of a scalar-valued function against
/// central differences, one input coordinate at a time.
///
/// `f` receives a fresh graph and the input leaf and must return a scalar
/// output variable. Returns the worst relative error over all coordinates:
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(SageError::Config(format!("grad_check: step must be positive, got {step}")));
    }

    let mut g = Graph::new();
    let leaf = g.leaf(x.clone().with_grad());
    let out = f(&mut g, leaf)?;
    if !g.value(out).is_scalar() {
        return Err(SageError::Contract(format!(
            "grad_check: function output must be scalar, got shape {:?}",
            g.value(out).shape()
        )));
    }
    let analytic = g.backward(out)?.wrt(leaf);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let mut g = Graph::new();
        let leaf = g.leaf(t);
        let out = f(&mut g, leaf)?;
        Ok(g.value(out).item())
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.data().to_vec();
        plus[i] += step;
        let mut minus = x.data().to_vec();
        minus[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (1e-8f64).max(a.abs() + numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}
