//! Central finite-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Worst relative error observed for one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub param: usize,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub rel_tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.rel_tol
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients of `loss_fn` against central differences.
///
/// `loss_fn` receives a fresh tape and the parameter handles, in the order
/// of `params`, and must return a scalar. At most `max_entries` entries per
/// parameter are perturbed, evenly spaced through the flat index range.
pub fn grad_check<F>(loss_fn: F, params: &[Tensor], step: f64, rel_tol: f64, max_entries: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::contract(format!("finite-difference step must be positive, got {step}")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let root = loss_fn(&mut tape, &vars)?;
        tape.value(root).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let root = loss_fn(&mut tape, &vars)?;
    let base = tape.value(root).item()?;
    let grads = tape.backward(root)?;
    let again = eval(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::contract(format!(
            "loss is not deterministic: {base} then {again}"
        )));
    }

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (p, (&var, param)) in vars.iter().zip(params).enumerate() {
        let analytic = grads.get_or_zeros(var, param);
        let n = param.numel();
        let stride = n.div_ceil(max_entries.max(1)).max(1);
        let mut check = ParamCheck {
            param: p,
            entries_checked: 0,
            max_rel_error: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in (0..n).step_by(stride) {
            let orig = param.data()[k];
            work[p].data_mut()[k] = orig + step;
            let plus = eval(&work)?;
            work[p].data_mut()[k] = orig - step;
            let minus = eval(&work)?;
            work[p].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[k];
            let err = relative_error(a, numeric);
            check.entries_checked += 1;
            if err >= check.max_rel_error {
                check.max_rel_error = err;
                check.worst_entry = k;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        rel_tol,
    })
}
