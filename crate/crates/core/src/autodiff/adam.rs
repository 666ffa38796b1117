use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Adam moments and hyper-parameters for one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: BTreeMap<_, _> = params
            .iter()
            .map(|(k, t)| (k.clone(), vec![0.0; t.len()]))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update from the gradients stored on `params`.
///
/// Gradients are validated before anything is written: a non-finite entry or
/// a shape mismatch aborts the step with the store and state untouched.
/// Tensors without a gradient buffer are treated as having zero gradient.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    for (name, tensor) in params.iter() {
        let (Some(m), Some(v)) = (state.m.get(name), state.v.get(name)) else {
            return Err(Error::data(format!(
                "optimizer state has no moments for `{name}`"
            )));
        };
        if m.len() != tensor.len() || v.len() != tensor.len() {
            return Err(Error::shape(
                "adam_step",
                format!("moments for `{name}` do not match {:?}", tensor.shape()),
            ));
        }
        if let Some(g) = tensor.grad() {
            if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of `{name}` has {} at index {bad}; step aborted",
                    g[bad]
                )));
            }
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);

    for (name, tensor) in params.iter_mut() {
        let m = state.m.get_mut(name).expect("validated above");
        let v = state.v.get_mut(name).expect("validated above");
        let grad = tensor.grad().map(<[f64]>::to_vec);
        let data = tensor.data_mut();
        for i in 0..data.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[i]);
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
