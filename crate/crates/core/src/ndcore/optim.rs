use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::tensor::Tensor;

/// Minibatch SGD settings. `seed` drives batch sampling in the training
/// loops that consume this config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Rescale the joint gradient to at most this L2 norm before the update.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Decay the learning rate linearly to this fraction of `lr` by the last step.
    #[serde(default = "one")]
    pub final_lr_fraction: f64,
    #[serde(default)]
    pub method: UpdateRule,
}

/// Parameter update rule. `Adam` uses `momentum` as its first-moment decay.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    #[default]
    Momentum,
    Adam,
}

fn one() -> f64 {
    1.0
}

impl SgdConfig {
    pub fn new(lr: f64, momentum: f64, batch_size: usize, steps: usize, seed: u64) -> Self {
        Self {
            lr,
            momentum,
            batch_size,
            steps,
            seed,
            clip_norm: None,
            final_lr_fraction: 1.0,
            method: UpdateRule::Momentum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 || c.is_nan() {
                return Err(Error::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config(format!(
                "final learning-rate fraction must lie in [0, 1], got {}",
                self.final_lr_fraction
            )));
        }
        Ok(())
    }

    /// Learning rate in effect at `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 || self.final_lr_fraction == 1.0 {
            return self.lr;
        }
        let frac = step as f64 / (self.steps - 1) as f64;
        self.lr * (1.0 - frac * (1.0 - self.final_lr_fraction))
    }
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Minibatch optimiser. Heavy-ball momentum: `v ← μ·v + g`, `p ← p − lr·v`.
/// Adam: bias-corrected first and second moments with `β₁ = μ`.
#[derive(Clone, Debug)]
pub struct Sgd {
    momentum: f64,
    rule: UpdateRule,
    velocity: Vec<Tensor>,
    second: Vec<Tensor>,
    t: i32,
}

impl Sgd {
    pub fn new(cfg: &SgdConfig) -> Self {
        Self {
            momentum: cfg.momentum,
            rule: cfg.method,
            velocity: Vec::new(),
            second: Vec::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = self.velocity.clone();
        }
        self.t = self.t.saturating_add(1);
        let mu = self.momentum;
        let c1 = 1.0 - mu.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), v), s) in params.iter_mut().zip(grads).zip(&mut self.velocity).zip(&mut self.second) {
            p.check_same(g, "sgd_step")?;
            let it = p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()).zip(s.data_mut());
            match self.rule {
                UpdateRule::Momentum => {
                    for (((pi, &gi), vi), _) in it {
                        *vi = mu * *vi + gi;
                        *pi -= lr * *vi;
                    }
                }
                UpdateRule::Adam => {
                    for (((pi, &gi), vi), si) in it {
                        *vi = mu * *vi + (1.0 - mu) * gi;
                        *si = ADAM_BETA2 * *si + (1.0 - ADAM_BETA2) * gi * gi;
                        *pi -= lr * (*vi / c1) / ((*si / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step() {
        let cfg = SgdConfig::new(0.1, 0.0, 1, 1, 0);
        let mut p = vec![Tensor::scalar(1.0)];
        Sgd::new(&cfg).step(&mut p, &[Tensor::scalar(0.5)], cfg.lr).unwrap();
        assert!((p[0].data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let cfg = SgdConfig::new(0.1, 0.9, 1, 1, 0);
        let mut opt = Sgd::new(&cfg);
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap()];
        let before = p.clone();
        for _ in 0..5 {
            opt.step(&mut p, &[Tensor::zeros(&[3])], cfg.lr).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let cfg = SgdConfig::new(0.1, 0.0, 1, 100, 0);
        let mut opt = Sgd::new(&cfg);
        let mut p = vec![Tensor::scalar(1.0)];
        for _ in 0..cfg.steps {
            let g = Tensor::scalar(2.0 * p[0].data()[0]);
            opt.step(&mut p, &[g], cfg.lr).unwrap();
        }
        let expected = (1.0f64 - 2.0 * cfg.lr).powi(100);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
        assert!(p[0].data()[0].abs() < 1e-4);
    }

    #[test]
    fn config_ranges() {
        assert!(SgdConfig::new(0.0, 0.0, 1, 1, 0).validate().is_err());
        assert!(SgdConfig::new(0.1, 1.0, 1, 1, 0).validate().is_err());
        assert!(SgdConfig::new(0.1, 0.5, 0, 1, 0).validate().is_err());
        assert!(SgdConfig::new(0.1, 0.5, 4, 0, 0).validate().is_ok());
    }

    #[test]
    fn linear_decay() {
        let mut cfg = SgdConfig::new(1.0, 0.0, 1, 11, 0);
        cfg.final_lr_fraction = 0.0;
        assert_eq!(cfg.lr_at(0), 1.0);
        assert!((cfg.lr_at(5) - 0.5).abs() < 1e-15);
        assert_eq!(cfg.lr_at(10), 0.0);
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        let mut cfg = SgdConfig::new(0.01, 0.9, 1, 1, 0);
        cfg.method = UpdateRule::Adam;
        let mut p = vec![Tensor::new(vec![2], vec![1.0, 1.0]).unwrap()];
        let g = Tensor::new(vec![2], vec![3.0, -0.002]).unwrap();
        Sgd::new(&cfg).step(&mut p, &[g], cfg.lr).unwrap();
        assert!((p[0].data()[0] - 0.99).abs() < 1e-9);
        assert!((p[0].data()[1] - 1.01).abs() < 1e-6);
    }

    #[test]
    fn adam_quadratic_bowl() {
        let mut cfg = SgdConfig::new(0.05, 0.9, 1, 2000, 0);
        cfg.method = UpdateRule::Adam;
        cfg.final_lr_fraction = 0.0;
        let mut opt = Sgd::new(&cfg);
        let mut p = vec![Tensor::scalar(1.0)];
        for step in 0..cfg.steps {
            let g = Tensor::scalar(2.0 * p[0].data()[0]);
            opt.step(&mut p, &[g], cfg.lr_at(step)).unwrap();
        }
        assert!(p[0].data()[0].abs() < 1e-3);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].sum_squares() - 1.0).abs() < 1e-12);
    }
}
