use crate::attack::pinball::check_alpha;
use crate::attack::regressor::lower_quantile;
use crate::error::{Error, Result};

/// Threshold of the marginal baseline: the `⌈α·n⌉`-th smallest public score.
pub fn marginal_threshold(public_scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if public_scores.is_empty() {
        return Err(Error::Empty("public scores"));
    }
    let mut sorted = public_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(lower_quantile(&sorted, alpha))
}

/// Example-independent attack: IN iff the score is at most a threshold
/// calibrated on public non-member scores.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalBaseline {
    alphas: Vec<f64>,
    thresholds: Vec<f64>,
}

impl MarginalBaseline {
    pub fn fit(public_scores: &[f64], alphas: &[f64]) -> Result<Self> {
        let thresholds = alphas
            .iter()
            .map(|&a| marginal_threshold(public_scores, a))
            .collect::<Result<_>>()?;
        Ok(Self {
            alphas: alphas.to_vec(),
            thresholds,
        })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn threshold(&self, level: usize) -> f64 {
        self.thresholds[level]
    }

    pub fn is_in(&self, score: f64, level: usize) -> bool {
        score <= self.thresholds[level]
    }

    /// Fraction of `scores` declared IN at `level`.
    pub fn in_rate(&self, scores: &[f64], level: usize) -> f64 {
        scores.iter().filter(|&&s| self.is_in(s, level)).count() as f64 / scores.len() as f64
    }
}
