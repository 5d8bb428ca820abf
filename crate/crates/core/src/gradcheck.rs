//! Central finite-difference gradient oracle.
//!
//! Runs the forward function on plain perturbed copies of the inputs and never
//! touches the backward pass, so it is independent of the code it checks.

use crate::autodiff::{Graph, Tensor, TensorError, Var};

/// Result of a gradient comparison for one input tensor.
#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`, 0 when both vanish.
    pub rel_err: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `‖analytic − numeric‖₂`.
    pub diff_norm: f64,
}

/// Compares autodiff gradients of a scalar `f(inputs)` with central
/// differences of step `h`. Only inputs whose index is in `check` are
/// perturbed (pass `None` to check all).
pub fn check<F>(inputs: &[Tensor], h: f64, check: Option<&[usize]>, f: F) -> Result<Vec<GradReport>, TensorError>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>, TensorError>,
{
    let graph = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let loss = f(&graph, &vars)?;
    graph.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| graph.grad(*v).expect("param leaves carry gradients"))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64, TensorError> {
        let g = Graph::new();
        let vs: Vec<Var<'_>> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vs)?.item())
    };

    let mut reports = Vec::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (idx, grad) in analytic.iter().enumerate() {
        if check.is_some_and(|c| !c.contains(&idx)) {
            continue;
        }
        let mut diff_sq = 0.0;
        let mut a_sq = 0.0;
        let mut n_sq = 0.0;
        for j in 0..inputs[idx].numel() {
            let orig = inputs[idx].data()[j];
            work[idx].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[idx].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[idx].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[j];
            diff_sq += (a - numeric).powi(2);
            a_sq += a * a;
            n_sq += numeric * numeric;
        }
        let denom = a_sq.sqrt().max(n_sq.sqrt());
        reports.push(GradReport {
            rel_err: if denom == 0.0 { 0.0 } else { diff_sq.sqrt() / denom },
            analytic_norm: a_sq.sqrt(),
            numeric_norm: n_sq.sqrt(),
            diff_norm: diff_sq.sqrt(),
        });
    }
    Ok(reports)
}

/// Largest relative error across the reports.
pub fn max_rel_err(reports: &[GradReport]) -> f64 {
    reports.iter().map(|r| r.rel_err).fold(0.0, f64::max)
}

/// Relative error of all checked inputs taken as one concatenated vector.
pub fn global_rel_err(reports: &[GradReport]) -> f64 {
    let sq = |f: fn(&GradReport) -> f64| reports.iter().map(|r| f(r).powi(2)).sum::<f64>().sqrt();
    let denom = sq(|r| r.analytic_norm).max(sq(|r| r.numeric_norm));
    if denom == 0.0 {
        0.0
    } else {
        sq(|r| r.diff_norm) / denom
    }
}
