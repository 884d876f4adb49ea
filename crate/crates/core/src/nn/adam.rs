use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// When set, the step size decays geometrically from `learning_rate`
    /// to this value over the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_learning_rate: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            final_learning_rate: None,
        }
    }
}

impl AdamConfig {
    /// Step size for iteration `it` of a run of `total` iterations.
    pub fn rate_at(&self, it: usize, total: usize) -> f64 {
        match self.final_learning_rate {
            None => self.learning_rate,
            Some(end) => {
                let frac = it as f64 / total.saturating_sub(1).max(1) as f64;
                self.learning_rate * (end / self.learning_rate).powf(frac)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let end_ok = self.final_learning_rate.is_none_or(|r| r > 0.0 && r.is_finite());
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite() && end_ok,
            "learning rates must be positive and finite"
        );
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    rate: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        AdamState {
            config,
            rate: config.learning_rate,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Overrides the step size used by subsequent updates.
    pub fn set_learning_rate(&mut self, rate: f64) {
        self.rate = rate;
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        ensure!(
            params.len() == self.m.len() && grads.len() == self.m.len(),
            "Adam state has {} slots, got {} params and {} grads",
            self.m.len(),
            params.len(),
            grads.len()
        );
        let AdamConfig { beta1, beta2, epsilon, .. } = self.config;
        let learning_rate = self.rate;
        self.step += 1;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = AdamState::new(AdamConfig::default(), 3);
        let mut p = vec![1.0, -2.0, 3.0];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn constant_gradient_moves_opposite_sign() {
        let mut adam = AdamState::new(AdamConfig::default(), 2);
        let mut p = vec![0.0, 0.0];
        let mut prev = p.clone();
        for _ in 0..200 {
            adam.step(&mut p, &[0.5, -2.0]).unwrap();
            assert!(p[0] < prev[0] && p[1] > prev[1]);
            prev = p.clone();
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, 1);
        let mut theta = vec![0.0];
        for _ in 0..10_000 {
            let g = 2.0 * (theta[0] - 5.0);
            adam.step(&mut theta, &[g]).unwrap();
        }
        assert!((theta[0] - 5.0).abs() < 1e-3, "theta = {}", theta[0]);
    }

    #[test]
    fn geometric_decay_hits_both_ends() {
        let cfg = AdamConfig {
            final_learning_rate: Some(1e-5),
            ..AdamConfig::default()
        };
        assert_eq!(cfg.rate_at(0, 101), 1e-3);
        assert!((cfg.rate_at(50, 101) - 1e-4).abs() < 1e-15);
        assert!((cfg.rate_at(100, 101) - 1e-5).abs() < 1e-18);
        assert_eq!(AdamConfig::default().rate_at(70, 101), 1e-3);
        assert!(AdamConfig { final_learning_rate: Some(0.0), ..cfg }.validate().is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut adam = AdamState::new(AdamConfig::default(), 2);
        assert!(adam.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
