//! AdamW: Adam moments with bias correction and decoupled multiplicative
//! weight decay, applied before the moment update. Biases, norm parameters,
//! and the positional encoding are excluded from decay.

use crate::error::{Error, Result};
use crate::model::params::{ParamKind, ParamStore};
use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub step: u64,
    pub weight_decay: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, weight_decay: f64) -> Self {
        AdamW {
            step: 0,
            weight_decay,
            m: store.values().iter().map(|t| vec![T::ZERO; t.numel()]).collect(),
            v: store.values().iter().map(|t| vec![T::ZERO; t.numel()]).collect(),
        }
    }

    /// Rebuilds optimizer state from serialized moments.
    pub fn from_moments(
        step: u64,
        weight_decay: f64,
        m: Vec<Vec<T>>,
        v: Vec<Vec<T>>,
    ) -> Self {
        AdamW { step, weight_decay, m, v }
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// One update over every parameter. `grads` is parallel to the store.
    pub fn apply(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[Vec<T>],
        learning_rate: f64,
    ) -> Result<()> {
        assert_eq!(grads.len(), store.len(), "gradient list mismatch");
        self.step += 1;
        let t = self.step;
        let bias1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let bias2 = 1.0 - ADAM_BETA2.powi(t as i32);
        let beta1 = T::from_f64(ADAM_BETA1);
        let beta2 = T::from_f64(ADAM_BETA2);
        let one_minus_beta1 = T::from_f64(1.0 - ADAM_BETA1);
        let one_minus_beta2 = T::from_f64(1.0 - ADAM_BETA2);
        let inv_bias1 = T::from_f64(1.0 / bias1);
        let inv_bias2 = T::from_f64(1.0 / bias2);
        let eps = T::from_f64(ADAM_EPS);
        let lr = T::from_f64(learning_rate);

        for idx in store.ids().collect::<Vec<_>>() {
            let grad = &grads[idx.0];
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {}",
                    store.def(idx).name
                )));
            }
            let decayed = self.weight_decay > 0.0
                && matches!(store.def(idx).kind, ParamKind::Weight);
            let decay_factor = T::from_f64(1.0 - learning_rate * self.weight_decay);
            let m = &mut self.m[idx.0];
            let v = &mut self.v[idx.0];
            let value = store.value_mut(idx).data_mut();
            for i in 0..value.len() {
                if decayed {
                    value[i] *= decay_factor;
                }
                m[i] = beta1 * m[i] + one_minus_beta1 * grad[i];
                v[i] = beta2 * v[i] + one_minus_beta2 * grad[i] * grad[i];
                let m_hat = m[i] * inv_bias1;
                let v_hat = v[i] * inv_bias2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.iter() {
        for v in g {
            let x = v.to_f64();
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g {
                *v *= scale;
            }
        }
    }
    norm
}
