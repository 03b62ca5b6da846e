//! AdamW over transformer towers, with linear warmup and linear decay.

use serde::{Deserialize, Serialize};

use crate::encoder::transformer::Tower;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Learning rate at zero-based `step`: ramps up over `warmup` steps (the
/// first step already uses `peak / warmup`), then decays linearly towards
/// zero at `total`.
pub fn scheduled_lr(peak: f64, step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let remaining = total.saturating_sub(step);
    let span = total.saturating_sub(warmup).max(1);
    peak * remaining as f64 / span as f64
}

/// Number of warmup steps for `fraction` of `total`, rounded up.
pub fn warmup_steps(fraction: f64, total: usize) -> usize {
    (fraction * total as f64).ceil() as usize
}

#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamConfig,
    m: Vec<Tower>,
    v: Vec<Tower>,
    t: u32,
}

impl AdamW {
    pub fn new(config: AdamConfig, params: &[Tower]) -> Self {
        Self {
            config,
            m: params.iter().map(Tower::zeros_like).collect(),
            v: params.iter().map(Tower::zeros_like).collect(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tower], grads: &[Tower], lr: f64) {
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let gs = g.tensors();
            for (((mut p, (_, g)), mut m), mut v) in
                p.tensors_mut().into_iter().zip(gs).zip(m.tensors_mut()).zip(v.tensors_mut())
            {
                ndarray::Zip::from(&mut p)
                    .and(&g)
                    .and(&mut m)
                    .and(&mut v)
                    .for_each(|p, &g, m, v| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                        *p -= lr * (update + weight_decay * *p);
                    });
            }
        }
    }
}

/// Global L2 norm of the gradients.
pub fn grad_norm(grads: &[Tower]) -> f64 {
    grads
        .iter()
        .flat_map(|t| t.tensors())
        .map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales the gradients so their global norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [Tower], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in grads.iter_mut() {
            for mut g in t.tensors_mut() {
                g.mapv_inplace(|x| x * s);
            }
        }
    }
    norm
}
