use crate::error::{NnError, Result};
use crate::params::{Gradients, Parameter, ParameterStore};

/// Adaptive-moment optimiser with bias correction and optional global-norm clipping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }

    pub fn without_clipping(mut self) -> Self {
        self.clip_norm = None;
        self
    }

    /// Updates every parameter that has a gradient and returns the pre-clip global norm.
    pub fn step(&self, store: &mut ParameterStore, grads: &Gradients) -> Result<f64> {
        for (id, g) in grads.iter() {
            if id.index() >= store.len() {
                return Err(NnError::Contract(format!("gradient for unknown parameter {}", id.index())));
            }
            let p = store.get(id);
            if p.value.shape() != g.shape() {
                return Err(NnError::Shape {
                    what: format!("gradient of {}", p.name),
                    expected: p.value.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
        }
        let norm = grads.global_norm();
        let scale = match self.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        for (id, g) in grads.iter() {
            let p = store.get_mut(id);
            p.step += 1;
            let t = p.step as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let Parameter { value, m, v, .. } = p;
            for (((w, mi), vi), gi) in value
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                let gi = gi * scale;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(norm)
    }
}
