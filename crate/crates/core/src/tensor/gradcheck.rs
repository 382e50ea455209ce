//! Central finite-difference check of reverse-mode gradients.
//!
//! The numeric side only ever evaluates the forward graph, so it stays
//! independent of the backward rules it verifies.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Entries whose analytic and numeric gradients are both below this magnitude
/// are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input index, flat element index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares `backward` against `(f(x+ε) − f(x−ε)) / 2ε` for every entry of
/// every input. `build` maps the input leaves to a scalar root and is
/// re-run from scratch for every perturbed evaluation.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let root = build(&g, &vars)?;
        g.item(root)
    };

    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let root = build(&g, &vars)?;
    let grads = g.backward(root)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v);
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[j];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::Contract(format!(
                    "non-finite gradient at input {i}[{j}]"
                )));
            }
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Generic counterpart used to spot-check lower-precision graphs against f64.
pub fn forward_value<T: Scalar, F>(inputs: &[Tensor<T>], build: F) -> Result<T>
where
    F: Fn(&Graph<T>, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let root = build(&g, &vars)?;
    g.item(root)
}
