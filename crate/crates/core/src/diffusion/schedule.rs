use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear β schedule with derived α and cumulative ᾱ. Arrays are indexed by
/// `t - 1` for steps `t = 1..=T`; [`NoiseSchedule::alphabar`] also accepts
/// `t = 0`, where ᾱ₀ = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alphabar: Vec<f64>,
    spec: ScheduleSpec,
}

/// Serialisable description from which a schedule is rebuilt.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        Ok(Self::from_betas(
            beta,
            ScheduleSpec {
                steps,
                beta_start,
                beta_end,
            },
        ))
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        Self::linear(spec.steps, spec.beta_start, spec.beta_end)
    }

    fn from_betas(beta: Vec<f64>, spec: ScheduleSpec) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alphabar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alphabar.push(acc);
        }
        Self {
            beta,
            alpha,
            alphabar,
            spec,
        }
    }

    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alphabars(&self) -> &[f64] {
        &self.alphabar
    }

    /// ᾱ_t for `t` in `0..=T`.
    pub fn alphabar(&self, t: usize) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.steps() => Ok(self.alphabar[t - 1]),
            _ => Err(self.range_error(t, 0, self.steps())),
        }
    }

    pub(crate) fn range_error(&self, t: usize, lo: usize, hi: usize) -> Error {
        Error::OutOfRange {
            what: "diffusion step",
            index: t,
            lo,
            hi,
        }
    }

    pub(crate) fn check_step(&self, t: usize, lo: usize, hi: usize) -> Result<()> {
        if t < lo || t > hi {
            return Err(self.range_error(t, lo, hi));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_products() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alphas(), &[0.5, 0.5]);
        assert_eq!(s.alphabars(), &[0.5, 0.25]);
        assert_eq!(s.alphabar(0).unwrap(), 1.0);
    }

    #[test]
    fn ddpm_schedule_nearly_destroys_signal() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let log_prod: f64 = (0..1000)
            .map(|i| (1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)).ln())
            .sum();
        let last = s.alphabar(1000).unwrap();
        assert!((last.ln() - log_prod).abs() < 1e-9);
        assert!(last < 0.01);
    }

    #[test]
    fn exact_recurrences() {
        let s = NoiseSchedule::linear(50, 0.002, 0.4).unwrap();
        for t in 1..=50 {
            assert_eq!(s.alphas()[t - 1], 1.0 - s.betas()[t - 1]);
            assert_eq!(s.alphabar(t).unwrap(), s.alphabar(t - 1).unwrap() * s.alphas()[t - 1]);
            assert!(s.alphabar(t).unwrap() < s.alphabar(t - 1).unwrap());
            assert!(s.alphabar(t).unwrap() > 0.0);
        }
        assert!(s.alphabar(51).is_err());
    }

    #[test]
    fn range_violations() {
        assert!(NoiseSchedule::linear(1, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }
}
