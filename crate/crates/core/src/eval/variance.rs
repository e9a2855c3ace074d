use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample variance of a binary verdict across repeated runs, with its
/// empirical CDF on a grid over `[0, 0.25]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCdf {
    pub variances: Vec<f64>,
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl VarianceCdf {
    pub fn mean(&self) -> f64 {
        self.variances.iter().sum::<f64>() / self.variances.len() as f64
    }
}

/// `runs[r][i]` is the verdict of run `r` on sample `i`. The variance of
/// sample `i` is `p(1−p)` with `p` its IN frequency.
pub fn verdict_variances(runs: &[Vec<bool>]) -> Result<Vec<f64>> {
    if runs.len() < 2 {
        return Err(Error::TooSmall(format!("variance needs at least 2 runs, got {}", runs.len())));
    }
    let n = runs[0].len();
    if runs.iter().any(|r| r.len() != n) {
        return Err(Error::Contract("runs cover different samples".into()));
    }
    let r = runs.len() as f64;
    Ok((0..n)
        .map(|i| {
            let p = runs.iter().filter(|run| run[i]).count() as f64 / r;
            p * (1.0 - p)
        })
        .collect())
}

pub fn variance_cdf(runs: &[Vec<bool>], grid_points: usize) -> Result<VarianceCdf> {
    let variances = verdict_variances(runs)?;
    if variances.is_empty() {
        return Err(Error::Empty("variance samples"));
    }
    let g = grid_points.max(2);
    let grid: Vec<f64> = (0..g).map(|i| 0.25 * i as f64 / (g - 1) as f64).collect();
    let n = variances.len() as f64;
    let cdf = grid
        .iter()
        .map(|&x| variances.iter().filter(|&&v| v <= x + 1e-15).count() as f64 / n)
        .collect();
    Ok(VarianceCdf { variances, grid, cdf })
}
