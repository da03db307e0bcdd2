//! Central finite differences as an independent gradient oracle.

use alloc::string::String;
use alloc::vec::Vec;

use super::{Gradients, Param};
use crate::Result;

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `loss`'s backward gradients against central differences with
/// step `eps` for every coordinate of the parameters exposed by `params`.
///
/// `loss` must be a deterministic function of the state (stochastic draws
/// frozen). Parameters whose gradient is absent from the tape are treated
/// as having zero analytic gradient.
pub fn finite_diff_check<S>(
    state: &mut S,
    params: impl Fn(&mut S) -> Vec<&mut Param>,
    eps: f64,
    loss: impl Fn(&S) -> Result<(f64, Gradients)>,
) -> Result<GradCheckReport> {
    let (_, grads) = loss(state)?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let n_params = params(state).len();
    for k in 0..n_params {
        let (name, len) = {
            let ps = params(state);
            (String::from(ps[k].name()), ps[k].value().len())
        };
        let analytic_grad = grads.get(&name).cloned();
        for i in 0..len {
            let original = params(state)[k].value().as_slice()[i];
            params(state)[k].value_mut().as_mut_slice()[i] = original + eps;
            let (plus, _) = loss(state)?;
            params(state)[k].value_mut().as_mut_slice()[i] = original - eps;
            let (minus, _) = loss(state)?;
            params(state)[k].value_mut().as_mut_slice()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = analytic_grad.as_ref().map_or(0.0, |g| g.as_slice()[i]);
            let err = relative_error(analytic, numeric);
            report.coordinates += 1;
            if err > report.max_relative_error || report.worst_param.is_empty() {
                report.max_relative_error = err.max(report.max_relative_error);
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
