use super::mlp::{Gradients, MlpParams};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates, one buffer per trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.trainable().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut MlpParams, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in params
        .trainable_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
}
