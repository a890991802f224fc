//! First-order optimizers over [`Gradients`]-shaped parameter sets.

use crate::error::Result;
use crate::worldmodel::{Gradients, Mlp};

/// Plain SGD with global gradient-norm clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl Sgd {
    pub fn new(learning_rate: f64, clip_norm: f64) -> Self {
        Self {
            learning_rate,
            clip_norm,
        }
    }

    pub fn step(&self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        let mut g = grads.clone();
        g.clip_norm(self.clip_norm);
        g.scale(self.learning_rate);
        net.apply_step(&g)
    }
}

/// Adam with bias correction and optional global-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    steps: u64,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, learning_rate: f64, clip_norm: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm,
            steps: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if self.learning_rate == 0.0 {
            return Ok(());
        }
        let mut g = grads.clone();
        g.clip_norm(self.clip_norm);
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
        let mut update = g.clone();
        for ((u, m), v) in update
            .values_mut()
            .zip(self.first.values_mut())
            .zip(self.second.values_mut())
        {
            let gi = *u;
            *m = b1 * *m + (1.0 - b1) * gi;
            *v = b2 * *v + (1.0 - b2) * gi * gi;
            *u = lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        }
        net.apply_step(&update)
    }
}
