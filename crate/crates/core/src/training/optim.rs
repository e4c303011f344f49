use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam hyperparameters with a step-decay schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// The rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay_every: 20, decay_factor: 0.5 }
    }
}

impl AdamConfig {
    /// Learning rate during zero-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            return self.lr;
        }
        self.lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// First and second moment estimates, one pair per trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(shapes: &[&[usize]]) -> Self {
        Self {
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// One bias-corrected update of `params` from `grads` (same order).
    pub fn update(&mut self, cfg: &AdamConfig, lr: f64, params: Vec<&mut Tensor<T>>, grads: &[Vec<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let step_size = T::of(lr * c2.sqrt() / c1);
        let eps_hat = T::of(cfg.eps * c2.sqrt());
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let (o1, o2) = (T::one() - b1, T::one() - b2);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if g.len() != p.len() {
                return Err(Error::Dimension("gradient length differs from its parameter".into()));
            }
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + o1 * g;
                *v = b2 * *v + o2 * g * g;
                *w -= step_size * *m / (v.sqrt() + eps_hat);
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Adam<U> {
        Adam { step: self.step, m: self.m.iter().map(Tensor::cast).collect(), v: self.v.iter().map(Tensor::cast).collect() }
    }
}
