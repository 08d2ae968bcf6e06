//! Adaptive-moment optimizer with decoupled weight decay.

use super::TrainError;
use crate::model::{Gradients, ModelError, Parameters};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub m: Parameters,
    pub v: Parameters,
    pub step: u64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(params: &Parameters, weight_decay: f64) -> Self {
        OptimizerState { m: params.zeros_like(), v: params.zeros_like(), step: 0, weight_decay }
    }
}

/// `p <- p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn optimizer_step(
    params: &mut Parameters,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let decay = 1.0 - lr * state.weight_decay;
    let grads = grads.slices();
    let ms = state.m.slices_mut();
    let vs = state.v.slices_mut();
    for (((p, g), m), v) in params.slices_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p = *p * decay - lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
        }
    }
    if !params.is_finite() {
        return Err(ModelError::NonFinite("parameter update").into());
    }
    Ok(())
}
