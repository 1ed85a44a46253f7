//! Adam optimizer with bias correction.

use alloc::collections::BTreeMap;
use alloc::string::String;

use super::{ParamStore, Tensor};
use crate::{num, Float};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: Float,
    pub beta1: Float,
    pub beta2: Float,
    pub eps: Float,
    /// Multiplier applied on validation plateaus.
    pub lr_decay: Float,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_decay: 0.9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub lr: Float,
    pub step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> AdamState {
        AdamState {
            lr: config.lr,
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn decay_lr(&mut self) {
        self.lr *= self.config.lr_decay;
    }

    /// One update from the gradients currently in the store; gradients are
    /// cleared afterwards.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let bias1 = 1.0 - num::powi(b1, t);
        let bias2 = 1.0 - num::powi(b2, t);
        for (name, p) in store.iter_mut() {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.rows, p.value.cols));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.rows, p.value.cols));
            debug_assert_eq!(m.len(), p.value.len());
            for i in 0..p.value.len() {
                let g = p.grad.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * g;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * g * g;
                let mhat = m.data[i] / bias1;
                let vhat = v.data[i] / bias2;
                p.value.data[i] -= self.lr * mhat / (num::sqrt(vhat) + self.config.eps);
                p.grad.data[i] = 0.0;
            }
        }
    }
}
