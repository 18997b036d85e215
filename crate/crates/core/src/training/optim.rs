use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};

/// One-cycle learning rate: cosine warm-up from `max_lr / div_factor` to
/// `max_lr` over the first `pct_start` of training, then cosine annealing to
/// `max_lr / (div_factor · final_div_factor)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

fn cos_anneal(start: f64, end: f64, pct: f64) -> f64 {
    end + (start - end) / 2.0 * ((PI * pct).cos() + 1.0)
}

impl OneCycle {
    /// Learning rate for zero-based `step`.
    pub fn lr(&self, step: usize) -> f64 {
        let initial = self.max_lr / self.div_factor;
        let min = initial / self.final_div_factor;
        let last = self.total_steps.saturating_sub(1).max(1) as f64;
        let peak = (self.pct_start * self.total_steps as f64 - 1.0).max(0.0);
        let s = (step as f64).min(last);
        if s <= peak && peak > 0.0 {
            cos_anneal(initial, self.max_lr, s / peak)
        } else {
            let span = (last - peak).max(1.0);
            cos_anneal(self.max_lr, min, (s - peak) / span)
        }
    }
}

/// Adam without weight decay.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) {
        assert_eq!(grads.len(), self.m.len(), "one gradient per parameter");
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let step_size = T::lit(lr / c1);
        let (c2_sqrt, eps) = (T::lit(c2.sqrt()), T::lit(self.eps));
        let one = T::one();
        for (i, value) in params.values_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in value.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                *w -= step_size * m[j] / (v[j].sqrt() / c2_sqrt + eps);
            }
        }
    }
}
