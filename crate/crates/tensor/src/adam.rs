//! Adam with bias correction.

use thiserror::Error;

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("optimizer state has {state} slots but the store has {store} parameters")]
    StateMismatch { state: usize, store: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| Tensor::zeros(store.value(id).shape()))
                .collect()
        };
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `store`.
    ///
    /// All gradients are checked before any parameter moves, so a failed step
    /// leaves the store untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<(), OptimError> {
        if self.m.len() != store.len() {
            return Err(OptimError::StateMismatch {
                state: self.m.len(),
                store: store.len(),
            });
        }
        if let Some(id) = store.ids().find(|&id| !store.grad(id).all_finite()) {
            return Err(OptimError::NonFiniteGradient(store.name(id).to_string()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let step_size = T::from_f64_lossy(c.lr / bc1);
        let inv_bc2_sqrt = T::from_f64_lossy(1.0 / bc2.sqrt());
        let eps = T::from_f64_lossy(c.eps);
        for id in store.ids() {
            let i = id.index();
            let grad = store.grad(id).data().to_vec();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let params = store.value_mut(id).data_mut();
            for j in 0..grad.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                params[j] -= step_size * m[j] / (v[j].sqrt() * inv_bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}
