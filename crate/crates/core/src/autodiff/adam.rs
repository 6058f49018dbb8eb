use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam optimizer state for every entry of a [`ParamStore`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, step_size: f64) -> Self {
        let zeros: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        AdamState {
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every trainable entry.
///
/// Gradients are checked before anything is written, so a divergence error
/// leaves both parameters and state untouched.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if grads.len() != store.len() || state.first.len() != store.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} gradients / {} moments for {} parameters",
            grads.len(),
            state.first.len(),
            store.len()
        )));
    }
    for (id, g) in store.ids().zip(grads) {
        if g.shape() != store.get(id).shape() {
            return Err(Error::dim("adam_step", format!("gradient shape for {}", store.name(id))));
        }
        if store.is_trainable(id) && !g.all_finite() {
            return Err(Error::Divergence { term: format!("gradient of {}", store.name(id)) });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        if !store.is_trainable(id) {
            continue;
        }
        let g = grads[k].values();
        let m = state.first[k].values_mut();
        let v = state.second[k].values_mut();
        let p = store.get_mut(id).values_mut();
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= state.step_size * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}
