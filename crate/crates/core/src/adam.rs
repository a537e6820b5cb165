use ndarray::{Array2, Zip};

use crate::grad::GradientBundle;
use crate::model::AttentionParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates for both parameter matrices plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_theta1: Array2<f64>,
    pub first_theta2: Array2<f64>,
    pub second_theta1: Array2<f64>,
    pub second_theta2: Array2<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &AttentionParams) -> Self {
        Self {
            first_theta1: Array2::zeros(params.theta1.raw_dim()),
            first_theta2: Array2::zeros(params.theta2.raw_dim()),
            second_theta1: Array2::zeros(params.theta1.raw_dim()),
            second_theta2: Array2::zeros(params.theta2.raw_dim()),
            step: 0,
        }
    }
}

fn update(
    param: &mut Array2<f64>,
    grad: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    step: u64,
) {
    let c1 = 1.0 - BETA1.powf(step as f64);
    let c2 = 1.0 - BETA2.powf(step as f64);
    Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        });
}

/// One bias-corrected Adam update of both matrices.
pub fn adam_step(
    params: &mut AttentionParams,
    grads: &GradientBundle,
    state: &mut AdamState,
    lr: f64,
) {
    state.step += 1;
    let step = state.step;
    update(
        &mut params.theta1,
        &grads.d_theta1,
        &mut state.first_theta1,
        &mut state.second_theta1,
        lr,
        step,
    );
    update(
        &mut params.theta2,
        &grads.d_theta2,
        &mut state.first_theta2,
        &mut state.second_theta2,
        lr,
        step,
    );
}
