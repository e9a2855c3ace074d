use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::error::{Error, Result};

/// Two-sample Mann–Whitney U test of `x` against `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of `x`: pairs with `x < y` plus half the ties.
    pub u: f64,
    /// `u / (|x|·|y|)`, the probability that `x` ranks below `y`.
    pub p_less: f64,
    pub z: f64,
    /// Two-sided p-value under the tie-corrected normal approximation.
    pub p_value: f64,
}

impl MannWhitney {
    /// True when `x` is significantly smaller than `y` at `level`.
    pub fn smaller_at(&self, level: f64) -> bool {
        self.p_value < level && self.p_less > 0.5
    }
}

pub fn mann_whitney(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Empty("Mann–Whitney sample"));
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let mut all: Vec<(f64, bool)> = x
        .iter()
        .map(|&v| (v, true))
        .chain(y.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut rank_sum_y = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        let size = (j - i + 1) as f64;
        tie_term += size.powi(3) - size;
        rank_sum_y += all[i..=j].iter().filter(|e| !e.1).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum_y - n2 * (n2 + 1.0) / 2.0;
    let mean = n1 * n2 / 2.0;
    let nt = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)).max(1.0));
    let (z, p_value) = if var > 0.0 {
        let z = (u - mean) / var.sqrt();
        let std = Normal::standard();
        (z, (2.0 * std.sf(z.abs())).min(1.0))
    } else {
        (0.0, 1.0)
    };
    Ok(MannWhitney {
        u,
        p_less: u / (n1 * n2),
        z,
        p_value,
    })
}

/// Equal-tailed acceptance interval for an observed rate when `n` trials
/// succeed with probability `p`: the `(1−level)/2` and `(1+level)/2`
/// quantiles of Binomial(n, p), divided by `n`.
pub fn binomial_interval(n: usize, p: f64, level: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Empty("binomial trials"));
    }
    let dist = Binomial::new(p, n as u64).map_err(|e| Error::Config(e.to_string()))?;
    let tail = (1.0 - level) / 2.0;
    let lo = dist.inverse_cdf(tail);
    let hi = dist.inverse_cdf(1.0 - tail);
    Ok((lo as f64 / n as f64, hi as f64 / n as f64))
}

/// Mean and sample standard deviation; exactly zero when all values agree.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
