//! Finite-difference verification of autograd gradients.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor in the relative error, so that near-zero gradients are
/// compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

/// Maximum relative error between autograd and central differences
/// `(f(x+eps) - f(x-eps)) / (2 eps)` over every element of every input.
///
/// `f` receives a fresh graph and one variable per entry of `inputs` and must
/// return a single-element variable.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars = xs
            .iter()
            .map(|x| g.input(x.clone(), true))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(Error::InvalidArgument("grad_check needs a scalar function".into()));
        }
        Ok((g, vars, out))
    };
    let (g, vars, out) = eval(inputs)?;
    let grads = g.backward(out)?;
    let mut worst = 0.0f64;
    let mut perturbed = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = inputs[k].data()[i];
            perturbed[k].data_mut()[i] = orig + eps;
            let (gp, _, op) = eval(&perturbed)?;
            perturbed[k].data_mut()[i] = orig - eps;
            let (gm, _, om) = eval(&perturbed)?;
            perturbed[k].data_mut()[i] = orig;
            let numeric = (gp.value(op).data()[0] - gm.value(om).data()[0]) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
