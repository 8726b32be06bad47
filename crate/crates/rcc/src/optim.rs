//! AdamW with decoupled weight decay, written against plain `f64` slices.
//!
//! The optimizer owns one pair of moment buffers per parameter tensor and
//! expects the same tensors, in the same order and with the same shapes, on
//! every call — exactly how the training loop uses it. Update rule per
//! element, with bias-corrected moments `m_hat` and `v_hat`:
//!
//! ```text
//! p -= lr * ( m_hat / (sqrt(v_hat) + eps) + weight_decay * p )
//! ```
//!
//! Decay multiplies the *parameter*, not the gradient, so it is not scaled
//! by the adaptive denominator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters; the defaults are the common `(0.9, 0.999, 1e-8)` with a
/// decoupled decay of `0.01`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("unusable optimizer hyperparameters: {self:?}")))
        }
    }
}

pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    /// `shapes` gives the element count of each parameter tensor that will
    /// be passed to [`AdamW::step`], in order.
    pub fn new(cfg: AdamWConfig, shapes: &[usize]) -> Result<Self> {
        cfg.validate()?;
        Ok(AdamW {
            cfg,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update. `params` and `grads` must match the shapes given at
    /// construction, tensor for tensor.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidInput(format!(
                "optimizer was built for {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != self.m[k].len() {
                return Err(Error::InvalidInput(format!(
                    "tensor {k} shape changed: expected {}, got {} params / {} grads",
                    self.m[k].len(),
                    p.len(),
                    g.len()
                )));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g[i];
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.cfg.learning_rate
                    * (m_hat / (v_hat.sqrt() + self.cfg.epsilon) + self.cfg.weight_decay * p[i]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn first_step_moves_against_gradient_by_about_lr() {
        // With zero decay, the very first update is lr * g / (|g| + eps),
        // i.e. lr in magnitude, opposite the gradient in sign.
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg, &[2]).unwrap();
        let mut p = vec![1.0, -2.0];
        opt.step(&mut [&mut p], &[&[0.5, -0.25]]).unwrap();
        assert_relative_eq!(p[0], 1.0 - 0.01, max_relative = 1e-6);
        assert_relative_eq!(p[1], -2.0 + 0.01, max_relative = 1e-6);
    }

    #[test]
    fn decay_shrinks_parameters_even_without_gradient() {
        let mut opt = AdamW::new(AdamWConfig::default(), &[1]).unwrap();
        let mut p = vec![10.0];
        for _ in 0..5 {
            opt.step(&mut [&mut p], &[&[0.0]]).unwrap();
        }
        assert!(p[0] < 10.0 && p[0] > 9.0, "decayed to {}", p[0]);
    }

    #[test]
    fn constant_gradient_descends_a_quadratic() {
        // Minimize f(x) = (x - 3)^2 / 2 from x = 0.
        let cfg = AdamWConfig { learning_rate: 0.1, weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, &[1]).unwrap();
        let mut x = vec![0.0];
        for _ in 0..300 {
            let g = x[0] - 3.0;
            opt.step(&mut [&mut x], &[&[g]]).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 0.05, "converged to {}", x[0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut opt = AdamW::new(AdamWConfig::default(), &[2]).unwrap();
        let mut p = vec![0.0, 0.0];
        assert!(opt.step(&mut [&mut p], &[&[1.0]]).is_err());
        let mut q = vec![0.0];
        assert!(opt.step(&mut [&mut q], &[&[1.0]]).is_err());
    }

    #[test]
    fn bad_hyperparameters_are_rejected() {
        let cfg = AdamWConfig { learning_rate: -1.0, ..Default::default() };
        assert!(AdamW::new(cfg, &[1]).is_err());
        let cfg = AdamWConfig { beta1: 1.0, ..Default::default() };
        assert!(AdamW::new(cfg, &[1]).is_err());
    }
}
