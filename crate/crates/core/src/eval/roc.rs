use serde::{Deserialize, Serialize};

use crate::attack::VerdictCube;
use crate::error::{Error, Result};

/// FPR targets reported in TPR-at-FPR tables.
pub const STANDARD_FPR_TARGETS: [f64; 4] = [0.01, 0.001, 0.0001, 0.00001];

/// ROC curve as `(fpr, tpr)` points, nondecreasing in both coordinates,
/// always including `(0, 0)` and `(1, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub positives: usize,
    pub negatives: usize,
}

impl RocCurve {
    /// Builds a curve from operating points; endpoints are added and
    /// duplicates removed.
    pub fn from_points(mut points: Vec<(f64, f64)>, positives: usize, negatives: usize) -> Result<Self> {
        if positives == 0 || negatives == 0 {
            return Err(Error::Empty("ROC population"));
        }
        if points
            .iter()
            .any(|&(f, t)| !(0.0..=1.0).contains(&f) || !(0.0..=1.0).contains(&t))
        {
            return Err(Error::Contract("ROC rates must lie in [0, 1]".into()));
        }
        points.push((0.0, 0.0));
        points.push((1.0, 1.0));
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        points.dedup();
        if points.windows(2).any(|w| w[1].1 < w[0].1) {
            return Err(Error::Contract("operating points are not jointly monotone".into()));
        }
        Ok(Self {
            points,
            positives,
            negatives,
        })
    }

    /// Area under the curve by the trapezoid rule.
    pub fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }

    /// TPR at the largest achieved FPR not exceeding `target`.
    pub fn tpr_at_fpr(&self, target: f64) -> f64 {
        self.points
            .iter()
            .filter(|p| p.0 <= target)
            .map(|p| p.1)
            .fold(0.0, f64::max)
    }

    pub fn table(&self, targets: &[f64]) -> TprAtFprTable {
        TprAtFprTable {
            entries: targets.iter().map(|&f| (f, self.tpr_at_fpr(f))).collect(),
        }
    }
}

pub fn tpr_at_fpr(curve: &RocCurve, target: f64) -> f64 {
    curve.tpr_at_fpr(target)
}

/// `(target fpr, achieved tpr)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TprAtFprTable {
    pub entries: Vec<(f64, f64)>,
}

/// Full-threshold ROC for score attacks where lower scores signal
/// membership: every distinct score is tried as an inclusive threshold.
pub fn roc_from_scores(members: &[f64], holdout: &[f64]) -> Result<RocCurve> {
    if members.is_empty() || holdout.is_empty() {
        return Err(Error::Empty("ROC population"));
    }
    let mut all: Vec<(f64, bool)> = members
        .iter()
        .map(|&s| (s, true))
        .chain(holdout.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (p, n) = (members.len() as f64, holdout.len() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::with_capacity(all.len());
    for (i, &(s, is_member)) in all.iter().enumerate() {
        if is_member {
            tp += 1;
        } else {
            fp += 1;
        }
        if all.get(i + 1).is_none_or(|next| next.0 != s) {
            points.push((fp as f64 / n, tp as f64 / p));
        }
    }
    RocCurve::from_points(points, members.len(), holdout.len())
}

/// ROC traced by a threshold attack swept over its quantile levels.
/// `member_in[k]` and `holdout_in[k]` are IN verdicts at level `k`.
pub fn roc_from_verdicts(member_in: &[Vec<bool>], holdout_in: &[Vec<bool>]) -> Result<RocCurve> {
    let rate = |v: &Vec<bool>| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64;
    let (p, n) = (
        member_in.first().map_or(0, Vec::len),
        holdout_in.first().map_or(0, Vec::len),
    );
    let points = member_in.iter().zip(holdout_in).map(|(m, h)| (rate(h), rate(m))).collect();
    RocCurve::from_points(points, p, n)
}

/// ROC of the majority vote of the first `m` bag members, swept over the
/// bag's quantile levels.
pub fn roc_from_cubes(members: &VerdictCube, holdout: &VerdictCube, m: usize) -> Result<RocCurve> {
    if m == 0 || m > members.members || m > holdout.members {
        return Err(Error::Config(format!(
            "bag prefix {m} outside 1..={}",
            members.members.min(holdout.members)
        )));
    }
    let points = (0..members.alphas.len())
        .map(|k| (holdout.in_rate(m, k), members.in_rate(m, k)))
        .collect();
    RocCurve::from_points(points, members.examples, holdout.examples)
}

/// `n` log-spaced levels from `lo` to `hi` merged with `extra`, sorted and
/// deduplicated.
pub fn alpha_grid(lo: f64, hi: f64, n: usize, extra: &[f64]) -> Result<Vec<f64>> {
    if !(lo > 0.0 && lo < hi && hi < 1.0) || n < 2 {
        return Err(Error::Config(format!(
            "level grid needs 0 < lo < hi < 1 and n ≥ 2, got {lo}, {hi}, {n}"
        )));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect();
    grid[0] = lo;
    grid[n - 1] = hi;
    grid.extend_from_slice(extra);
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * y.abs());
    Ok(grid)
}
