//! Central finite differences as the reference for analytic gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Below this magnitude differences are judged in absolute terms.
const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub tol: f64,
    pub passed: bool,
}

fn eval<F>(inputs: &[Tensor], f: &F) -> f64
where
    F: Fn(&Graph, &[Var]) -> Var,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&g, &vars);
    g.value(out).item()
}

/// Gradients of the scalar `f` with respect to every input, via backward.
pub fn analytic_gradients<F>(inputs: &[Tensor], f: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&Graph, &[Var]) -> Var,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&g, &vars);
    let grads = g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .wrt(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect())
}

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for every element of every input.
pub fn numeric_gradients<F>(inputs: &[Tensor], f: &F, h: f64) -> Vec<Tensor>
where
    F: Fn(&Graph, &[Var]) -> Var,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[k].rows(), inputs[k].cols());
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let plus = eval(&work, f);
            work[k].data_mut()[i] = orig - h;
            let minus = eval(&work, f);
            work[k].data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// Element-wise `|a − n| / max(|a|, |n|, 1e-4)`, maximized over all entries.
pub fn compare(analytic: &[Tensor], numeric: &[Tensor], tol: f64) -> GradCheckReport {
    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (i, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(REL_FLOOR);
            if rel > max_rel_error || rel.is_nan() {
                max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                worst = Some((k, i));
            }
        }
    }
    GradCheckReport {
        max_rel_error,
        worst,
        tol,
        passed: max_rel_error <= tol,
    }
}

/// Checks backward against central differences with step [`DEFAULT_STEP`].
pub fn grad_check<F>(inputs: &[Tensor], f: F, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Graph, &[Var]) -> Var,
{
    let analytic = analytic_gradients(inputs, &f)?;
    let numeric = numeric_gradients(inputs, &f, DEFAULT_STEP);
    Ok(compare(&analytic, &numeric, tol))
}
