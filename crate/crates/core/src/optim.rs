//! Adam optimizer with bias correction.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

/// First/second moment estimates for one parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step_count: u64,
}

/// Adam over every parameter of a store.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    states: Vec<AdamState<T>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let states = store
            .ids()
            .map(|id| AdamState {
                m: Tensor::zeros(store.value(id).shape()),
                v: Tensor::zeros(store.value(id).shape()),
                step_count: 0,
            })
            .collect();
        Self { states, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    pub fn state(&self, index: usize) -> &AdamState<T> {
        &self.states[index]
    }

    /// One update over all parameters from their accumulated gradients.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::Config(alloc::format!("learning rate must be positive, got {lr}")));
        }
        if self.states.len() != store.len() {
            return Err(Error::Contract("optimizer state does not match parameter store"));
        }
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let eps = T::lit(self.epsilon);
        let one = T::one();
        for id in store.ids() {
            let st = &mut self.states[id.index()];
            st.step_count += 1;
            let corr1 = T::lit(1.0 - self.beta1.powi(st.step_count as i32));
            let corr2 = T::lit(1.0 - self.beta2.powi(st.step_count as i32));
            let lr_t = T::lit(lr);
            let g = store.grad(id).clone();
            for i in 0..g.numel() {
                let gi = g.data()[i];
                let m = b1 * st.m.data()[i] + (one - b1) * gi;
                let v = b2 * st.v.data()[i] + (one - b2) * gi * gi;
                st.m.data_mut()[i] = m;
                st.v.data_mut()[i] = v;
                let m_hat = m / corr1;
                let v_hat = v / corr2;
                let p = &mut store.value_mut(id).data_mut()[i];
                *p = *p - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
