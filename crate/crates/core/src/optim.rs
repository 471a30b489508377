//! Adam with bias correction.

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `store`, then
    /// zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if !store.grads_ready() {
            return Err(Error::State(
                "adam step called before backward populated gradients".into(),
            ));
        }
        if self.m.is_empty() {
            self.m = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(md).zip(vd) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        store.mark_grads_consumed();
        Ok(())
    }
}
