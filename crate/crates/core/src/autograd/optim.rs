use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Matrix, Param};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Matrix,
    pub second_moment: Matrix,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn for_param(param: &Param) -> Self {
        let (r, c) = param.shape();
        Self {
            first_moment: Matrix::zeros(r, c),
            second_moment: Matrix::zeros(r, c),
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam step on `param` using `param.grad`.
pub fn adam_step(param: &mut Param, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.first_moment.shape() != param.shape() {
        return Err(Error::shape(
            "adam_step",
            super::param::shape_str(param.shape()),
            super::param::shape_str(state.first_moment.shape()),
        ));
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - libm::pow(b1, t);
    let c2 = 1.0 - libm::pow(b2, t);
    let grad = param.grad().as_slice().to_vec();
    let m = state.first_moment.as_mut_slice();
    let v = state.second_moment.as_mut_slice();
    for (((p, g), m), v) in param.value_mut().as_mut_slice().iter_mut().zip(&grad).zip(m).zip(v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (libm::sqrt(v_hat) + state.eps);
    }
    if !param.value().is_finite() {
        return Err(Error::NonFinite("parameter after adam step"));
    }
    Ok(())
}

/// Scales all gradients so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradient_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let norm = libm::sqrt(params.iter().map(|p| p.grad().squared_norm()).sum::<f64>());
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for p in params.iter_mut() {
            p.grad_mut().scale_assign(k);
        }
    }
    norm
}

/// `target <- tau * source + (1 - tau) * target`, element-wise.
pub fn soft_update(target: &mut Param, source: &Param, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(alloc::format!("tau = {tau} outside [0, 1]")));
    }
    if target.shape() != source.shape() {
        return Err(Error::shape(
            "soft_update",
            super::param::shape_str(target.shape()),
            super::param::shape_str(source.shape()),
        ));
    }
    for (t, s) in target.value_mut().as_mut_slice().iter_mut().zip(source.value().as_slice()) {
        *t = tau * s + (1.0 - tau) * *t;
    }
    Ok(())
}

/// Adam over a fixed, ordered list of parameters (one network).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(params: &[&Param]) -> Self {
        Self {
            states: params.iter().map(|p| AdamState::for_param(p)).collect(),
        }
    }

    /// Clips the joint gradient norm to `clip`, steps every parameter and
    /// clears the gradients. Returns the pre-clip norm.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64, clip: f64) -> Result<f64> {
        if params.len() != self.states.len() {
            return Err(Error::shape("Adam::step", self.states.len(), params.len()));
        }
        let norm = clip_gradient_norm(params, clip);
        for (p, s) in params.iter_mut().zip(&mut self.states) {
            adam_step(p, s, lr)?;
            p.zero_grad();
        }
        Ok(norm)
    }
}
