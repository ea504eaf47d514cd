//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward pass, so it stays independent
//! of the backward rules it is used to verify.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;

/// Denominator floor for the relative error of near-zero gradient entries.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    pub max_rel_error: f64,
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `f` with central
/// differences of step `h` for every entry of every input.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
        .collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel: f64 = 0.0;
    for k in 0..inputs.len() {
        let mut nk = Tensor::zeros(inputs[k].shape());
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            work[k].data_mut()[i] = x0 + h;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = x0 - h;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = x0;
            let d = (fp - fm) / (2.0 * h);
            nk.data_mut()[i] = d;
            max_rel = max_rel.max(rel_error(analytic[k].data()[i], d));
        }
        numeric.push(nk);
    }
    Ok(GradCheck { analytic, numeric, max_rel_error: max_rel })
}
