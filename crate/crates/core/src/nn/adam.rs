use serde::{Deserialize, Serialize};

use super::Parameterized;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.002, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction; moment estimates mirror the model's parameter layout.
#[derive(Clone, Debug)]
pub struct Adam<M> {
    config: AdamConfig,
    first: M,
    second: M,
    steps: u64,
}

impl<M> Adam<M> {
    pub fn steps(&self) -> u64 {
        self.steps
    }
}

impl<M> Adam<M> {
    pub fn new<T: Real>(model: &M, config: AdamConfig) -> Self
    where
        M: Parameterized<T>,
    {
        Self { config, first: model.zeros_like(), second: model.zeros_like(), steps: 0 }
    }

    pub fn step<T: Real>(&mut self, model: &mut M, grads: &M)
    where
        M: Parameterized<T>,
    {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let lr = c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
        let (lr, b1, b2, eps) = (
            T::from_f64_lossy(lr),
            T::from_f64_lossy(c.beta1),
            T::from_f64_lossy(c.beta2),
            T::from_f64_lossy(c.eps * (1.0 - c.beta2.powi(t)).sqrt()),
        );
        let one = T::one();
        let grads = grads.params();
        let first = self.first.params_mut();
        let second = self.second.params_mut();
        for (((_, p), (_, g)), ((_, m), (_, v))) in model.params_mut().into_iter().zip(grads).zip(first.into_iter().zip(second)) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= lr * *m / (v.sqrt() + eps);
            }
        }
    }
}
