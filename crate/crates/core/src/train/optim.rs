use serde::{Deserialize, Serialize};

use crate::nn::ParamSet;
use crate::real::Real;

/// Adam with decoupled weight decay; decay applies to matrices and higher
/// rank tensors only.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<F> {
    pub hyper: AdamHyper,
    pub step: u64,
    pub m: ParamSet<F>,
    pub v: ParamSet<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamHyper {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

impl<F: Real> AdamW<F> {
    pub fn new(params: &ParamSet<F>, weight_decay: f64) -> Self {
        Self {
            hyper: AdamHyper::new(weight_decay),
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn apply(&mut self, params: &mut ParamSet<F>, grads: &ParamSet<F>, lr: f64) {
        self.step += 1;
        let h = self.hyper;
        let b1 = F::c(h.beta1);
        let b2 = F::c(h.beta2);
        let c1 = F::c(1.0 - h.beta1);
        let c2 = F::c(1.0 - h.beta2);
        let bc1 = F::c(1.0 - h.beta1.powi(self.step as i32));
        let bc2 = F::c(1.0 - h.beta2.powi(self.step as i32));
        let lr_f = F::c(lr);
        let eps = F::c(h.eps);
        let tensors = params.tensors_mut();
        for (k, p) in tensors.iter_mut().enumerate() {
            let decay = if p.ndim() >= 2 { F::c(lr * h.weight_decay) } else { F::zero() };
            let g = &grads.tensors()[k];
            let m = &mut self.m.tensors_mut()[k];
            let v = &mut self.v.tensors_mut()[k];
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr_f * mhat / (vhat.sqrt() + eps) + decay * *p;
            });
        }
    }
}

/// Rescales `grads` to global L2 norm `max_norm` if it is larger; returns
/// the norm before clipping.
pub fn clip_global_norm<F: Real>(grads: &mut ParamSet<F>, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm {
        grads.scale(F::c(max_norm / norm));
    }
    norm
}
