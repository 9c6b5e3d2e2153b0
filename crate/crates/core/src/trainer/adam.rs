use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
    pub decay_rate: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { base_lr: 1e-3, warmup_steps: 2000, decay_steps: 40_000, decay_rate: 0.5 }
    }
}

impl Schedule {
    /// `base_lr · min(step / warmup, 1) · rate^⌊step / decay_steps⌋`.
    pub fn lr(&self, step: u64) -> f64 {
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            (step as f64 / self.warmup_steps as f64).min(1.0)
        };
        let decays = if self.decay_steps == 0 { 0 } else { step / self.decay_steps };
        self.base_lr * warm * self.decay_rate.powi(decays.min(i32::MAX as u64) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("training.base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Config(format!("training.decay_rate must be in (0, 1], got {}", self.decay_rate)));
        }
        Ok(())
    }
}

pub fn lr_schedule(step: u64) -> f64 {
    Schedule::default().lr(step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn zeros_like(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One update with bias correction for the 1-based iteration `t`.
    pub fn update(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64, t: u64, cfg: &AdamConfig) {
        assert_eq!(params.len(), self.m.len(), "parameter list does not match optimizer state");
        let b1 = T::lit(cfg.beta1);
        let b2 = T::lit(cfg.beta2);
        let c1 = T::lit(1.0 - cfg.beta1);
        let c2 = T::lit(1.0 - cfg.beta2);
        let bc1 = T::lit(1.0 - cfg.beta1.powf(t as f64));
        let bc2 = T::lit(1.0 - cfg.beta2.powf(t as f64));
        let lr = T::lit(lr);
        let eps = T::lit(cfg.eps);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..p.len() {
                m[i] = b1 * m[i] + c1 * g[i];
                v[i] = b2 * v[i] + c2 * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(0), 0.0);
        assert!((lr_schedule(1000) - 5e-4).abs() < 1e-18);
        assert!((lr_schedule(2000) - 1e-3).abs() < 1e-18);
        assert!((lr_schedule(39_999) - 1e-3).abs() < 1e-18);
        assert!((lr_schedule(40_000) - 5e-4).abs() < 1e-18);
        assert!((lr_schedule(80_000) - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn adam_matches_hand_trace() {
        // f(x) = x², x₀ = 1, constant lr 0.1; values traced by hand
        let trace = [0.9000000005, 0.8004122286917927, 0.70158627294603, 0.6039390605737458, 0.5079636592643417];
        let cfg = AdamConfig::default();
        let mut s = AdamState::<f64>::zeros_like(&[1]);
        let mut x = [1.0f64];
        for (t, expect) in (1..=5u64).zip(trace) {
            let g = 2.0 * x[0];
            s.update(&mut [&mut x[..]], &[&[g][..]], 0.1, t, &cfg);
            assert!((x[0] - expect).abs() < 1e-12, "step {t}: {} vs {expect}", x[0]);
        }
        // one step of Adam moves by ≈ lr regardless of the gradient scale
        let mut s = AdamState::<f64>::zeros_like(&[1]);
        let mut y = [0.0f64];
        s.update(&mut [&mut y[..]], &[&[1e-3][..]], 0.1, 1, &cfg);
        assert!((y[0] + 0.1).abs() < 1e-5);
    }
}
