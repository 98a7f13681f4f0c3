//! Central-difference verification of tape gradients.

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares tape gradients of the scalar `f` against
/// `(f(θ + eps) - f(θ - eps)) / (2 eps)` for every element of `params`
/// (all parameters when empty).
///
/// `f` must be deterministic: it is re-evaluated twice per element.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    eps: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let targets: Vec<ParamId> = if params.is_empty() {
        store.ids().collect()
    } else {
        params.to_vec()
    };
    store.zero_grad();
    let mut tape = Tape::new(0);
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = targets
        .iter()
        .map(|&id| store.grad(id).data().to_vec())
        .collect();
    store.zero_grad();

    let mut eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(0);
        let loss = f(&mut tape, store)?;
        Ok(tape.value(loss).item())
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (&id, grads) in targets.iter().zip(&analytic) {
        for (j, &a) in grads.iter().enumerate() {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + eps;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[j] = orig - eps;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = store.name(id).to_string();
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
