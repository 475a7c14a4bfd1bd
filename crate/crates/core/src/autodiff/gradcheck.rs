use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Returns `max_k |analytic_k - numeric_k| / max(1, |analytic_k|)`.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidConfig(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    let mut g = Graph::new();
    let x = g.param(point.clone());
    let y = f(&mut g, x)?;
    g.backward(y)?;
    let analytic = g.grad(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()));
    let eval = |p: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(p);
        let y = f(&mut g, x)?;
        Ok(g.value(y).item())
    };
    let mut worst = 0.0f64;
    for k in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[k] += h;
        let mut minus = point.clone();
        minus.data_mut()[k] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[k];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
