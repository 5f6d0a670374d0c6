use super::OptimConfig;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize, cfg: &OptimConfig) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update. Non-finite gradients abort before any change.
    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Length(format!(
                "{} parameters, {} gradients, optimizer sized {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient {i} is {}", grads[i])));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let g = g as f64;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *p = (*p as f64 - update) as f32;
        }
        Ok(())
    }
}
