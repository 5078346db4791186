use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(flatten)]
        params: AdamParams,
    },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            params: AdamParams::default(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub params: AdamParams,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: AdamParams, dim: usize) -> Result<Self> {
        let ok = |b: f64| b > 0.0 && b < 1.0;
        if !ok(params.beta1) || !ok(params.beta2) || !(params.epsilon >= 0.0) {
            return Err(Error::InvalidConfig(
                "adam needs beta1, beta2 in (0, 1) and epsilon >= 0".into(),
            ));
        }
        Ok(Self {
            params,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        })
    }
}

/// The update direction `h = J(grad f)` with any state `J` carries.
#[derive(Debug, Clone, PartialEq)]
pub enum DirectionalDerivative {
    Sgd,
    Adam(AdamState),
}

impl DirectionalDerivative {
    pub fn new(kind: &OptimizerKind, dim: usize) -> Result<Self> {
        Ok(match kind {
            OptimizerKind::Sgd => DirectionalDerivative::Sgd,
            OptimizerKind::Adam { params } => {
                DirectionalDerivative::Adam(AdamState::new(*params, dim)?)
            }
        })
    }

    pub fn direction(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        match self {
            DirectionalDerivative::Sgd => direction_sgd(grad),
            DirectionalDerivative::Adam(s) => direction_adam(grad, s),
        }
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: v[index],
        }),
        None => Ok(()),
    }
}

/// Plain gradient.
pub fn direction_sgd(grad: &[f64]) -> Result<Vec<f64>> {
    check_finite(grad)?;
    Ok(grad.to_vec())
}

/// Bias-corrected moment ratio
/// `sqrt(1 - b2^t) / (1 - b1^t) * m / (sqrt(v) + eps)`.
pub fn direction_adam(grad: &[f64], state: &mut AdamState) -> Result<Vec<f64>> {
    check_finite(grad)?;
    if grad.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            expected: state.m.len(),
            got: grad.len(),
        });
    }
    let AdamParams {
        beta1,
        beta2,
        epsilon,
    } = state.params;
    state.t += 1;
    let t = state.t as i32;
    let scale = (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
    let mut h = Vec::with_capacity(grad.len());
    for ((g, m), v) in grad.iter().zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        h.push(scale * *m / (v.sqrt() + epsilon));
    }
    check_finite(&h).map_err(|_| Error::Numerical("adam direction is not finite".into()))?;
    Ok(h)
}
