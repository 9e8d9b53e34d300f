//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::SharedTensor;

/// Outcome of a finite-difference sweep over a set of parameters.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    /// Total number of scalar entries compared.
    pub checked: usize,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`, the symmetric error used throughout.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()).max(1e-8))
}

/// Compares analytic gradients against central finite differences.
///
/// `f` must run one fresh forward pass over the current parameter values,
/// run backward from the resulting scalar loss, and return that loss. The
/// checker zeroes every listed gradient, calls `f` once to capture analytic
/// gradients, then re-evaluates `f` at `value ± step` for every scalar entry
/// and compares against `(f(v + step) - f(v - step)) / (2 step)`. Parameter
/// values are restored exactly after each probe.
pub fn check_gradients<F>(
    params: &[(String, SharedTensor)],
    mut f: F,
    step: f64,
) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<f64>,
{
    for (name, p) in params {
        if !p.borrow().requires_grad() {
            return Err(Error::Contract(format!(
                "gradient check requires trainable tensors, `{name}` has no gradient"
            )));
        }
        p.zero_grad();
    }
    f()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.borrow().grad().expect("grad allocated above").to_vec())
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for ((name, p), grads) in params.iter().zip(&analytic) {
        for i in 0..grads.len() {
            let original = p.borrow().data()[i];
            p.borrow_mut().data_mut()[i] = original + step;
            let loss_plus = f()?;
            p.borrow_mut().data_mut()[i] = original - step;
            let loss_minus = f()?;
            p.borrow_mut().data_mut()[i] = original;

            let fd = (loss_plus - loss_minus) / (2.0 * step);
            let rel = relative_error(grads[i], fd);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
