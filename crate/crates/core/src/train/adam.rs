//! Adam with bias correction.

use crate::embed::{ModelConfig, Params};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps taken so far.
    pub t: u64,
    pub m: Params,
    pub v: Params,
}

impl Adam {
    pub fn new(lr: f64, cfg: &ModelConfig) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Params::zeros(cfg),
            v: Params::zeros(cfg),
        }
    }

    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let tensors = params
            .named_mut()
            .into_iter()
            .zip(grad.named())
            .zip(self.m.named_mut().into_iter().zip(self.v.named_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in tensors {
            let it = p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
            for ((p, &g), (m, v)) in it {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}
