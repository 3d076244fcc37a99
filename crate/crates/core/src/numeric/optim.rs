use serde::{Deserialize, Serialize};

use super::{check_layout, NumericError, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment accumulators, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<P> {
    pub first: P,
    pub second: P,
    pub step: u64,
    pub config: AdamConfig,
}

impl<P: ParamSet> AdamState<P> {
    pub fn new(params: &P, config: AdamConfig) -> Self {
        Self { first: params.zeros_like(), second: params.zeros_like(), step: 0, config }
    }
}

/// Bias-corrected Adam step, in place.
pub fn adaptive_update<P: ParamSet>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<P>,
    learning_rate: f64,
) -> Result<(), NumericError> {
    check_layout(params, grads)?;
    check_layout(params, &state.first)?;
    if !grads.is_finite() {
        return Err(NumericError::NonFiniteGradient);
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, epsilon } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first.tensors_mut().into_iter().zip(state.second.tensors_mut()));
    for ((p, g), (m, v)) in tensors {
        let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((p, &g), (m, v)) in it {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

/// How the L2 weight enters the Adagrad step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Mode {
    /// `g + w * p` is used both for the accumulator and the step.
    #[default]
    Gradient,
    /// Plain Adagrad step on `g`, then the closed-form proximal map of
    /// `w/2 * |p|^2`: `p / (1 + lr_eff * w)`.
    Proximal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState<P> {
    pub accumulator: P,
    pub epsilon: f64,
    pub mode: L2Mode,
}

impl<P: ParamSet> AdagradState<P> {
    pub fn new(params: &P, mode: L2Mode) -> Self {
        Self { accumulator: params.zeros_like(), epsilon: 1e-10, mode }
    }
}

/// Adagrad with L2 regularization, in place.
pub fn adagrad_l2_update<P: ParamSet>(
    params: &mut P,
    grads: &P,
    state: &mut AdagradState<P>,
    learning_rate: f64,
    l2_weight: f64,
) -> Result<(), NumericError> {
    check_layout(params, grads)?;
    check_layout(params, &state.accumulator)?;
    let (eps, mode) = (state.epsilon, state.mode);
    let tensors = params.tensors_mut().into_iter().zip(grads.tensors()).zip(state.accumulator.tensors_mut());
    for ((p, g), acc) in tensors {
        for ((p, &g), a) in p.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut().iter_mut()) {
            match mode {
                L2Mode::Gradient => {
                    let g_reg = g + l2_weight * *p;
                    *a += g_reg * g_reg;
                    *p -= learning_rate * g_reg / (*a + eps).sqrt();
                }
                L2Mode::Proximal => {
                    *a += g * g;
                    let lr_eff = learning_rate / (*a + eps).sqrt();
                    let v = *p - lr_eff * g;
                    *p = v / (1.0 + lr_eff * l2_weight);
                }
            }
        }
    }
    Ok(())
}
