//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self { m: vec![T::ZERO; len], v: vec![T::ZERO; len], step: 0 }
    }
}

/// One Adam update of `param` in place; the moments are kept in `T` and the
/// update arithmetic is done in `f64`.
pub fn adam_step<T: Element>(param: &mut Tensor<T>, grad: &[T], state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    let n = param.numel();
    if grad.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::shape(
            "adam_step",
            format!("parameter has {n} elements, gradient {}, state {}", grad.len(), state.m.len()),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        let g = g.as_f64();
        let m_new = cfg.beta1 * m.as_f64() + (1.0 - cfg.beta1) * g;
        let v_new = cfg.beta2 * v.as_f64() + (1.0 - cfg.beta2) * g * g;
        *m = T::from_f64(m_new);
        *v = T::from_f64(v_new);
        let update = cfg.learning_rate * (m_new / bc1) / ((v_new / bc2).sqrt() + cfg.epsilon);
        *p = T::from_f64(p.as_f64() - update);
    }
    Ok(())
}
