use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_err: f64,
    /// Parameter and element index where the largest error occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Checks every element of `params` by central differences with step `eps`.
///
/// `f` builds a scalar loss from one tape leaf per parameter, in order.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::NonPositive { what: "eps", value: eps });
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.item(loss))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for p in 0..params.len() {
        for k in 0..params[p].len() {
            let orig = params[p].data()[k];
            work[p].data_mut()[k] = orig + eps;
            let plus = eval(&work)?;
            work[p].data_mut()[k] = orig - eps;
            let minus = eval(&work)?;
            work[p].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > report.max_rel_err || report.checked == 0 {
                report.max_rel_err = rel;
                report.worst = (p, k);
                report.analytic = a;
                report.numeric = numeric;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
