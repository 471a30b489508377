//! Central finite-difference gradient checking.

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Worst disagreement found by [`check_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// `|a - n| / max(|a|, |n|, 1e-3)`; the floor keeps near-zero gradients
/// from blowing the ratio up.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares backprop gradients of every parameter entry against central
/// differences. `loss` must rebuild the same scalar each call (fix any
/// dropout RNG seed inside it).
pub fn check_params<F>(store: &mut ParamStore, step: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = loss(store, &mut tape)?;
    if tape.value(out).len() != 1 {
        return Err(Error::shape("gradcheck", tape.value(out).shape(), &[1]));
    }
    store.zero_grads();
    tape.backward_into(out, store)?;
    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| p.grad.data().to_vec()).collect();
    store.zero_grads();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = loss(s, &mut t)?;
        Ok(t.value(v).item())
    };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for p in 0..store.len() {
        let n = store.params_mut()[p].value.len();
        for i in 0..n {
            let orig = store.params_mut()[p].value.data()[i];
            store.params_mut()[p].value.data_mut()[i] = orig + step;
            let up = eval(store)?;
            store.params_mut()[p].value.data_mut()[i] = orig - step;
            let down = eval(store)?;
            store.params_mut()[p].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[p][i];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = e.max(report.max_rel_err);
                report.worst_param = store.params_mut()[p].name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
