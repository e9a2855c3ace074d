use serde::{Deserialize, Serialize};

use crate::attack::VerdictCube;
use crate::error::{Error, Result};
use crate::eval::roc::roc_from_cubes;
use crate::eval::stats::mean_std;

/// Verdicts of one bag (one master seed) on members and holdout.
#[derive(Clone, Debug)]
pub struct BagRun {
    pub members: VerdictCube,
    pub holdout: VerdictCube,
}

/// Mean and spread of TPR at one FPR target across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub trunk_width: usize,
    pub fpr: f64,
    pub mean_tpr: f64,
    pub std_tpr: f64,
    pub runs: usize,
}

/// TPR at each FPR target for the first `m` members of every run, then
/// aggregated per `(trunk, m, fpr)`. `by_trunk` pairs a trunk width with
/// its runs, one per seed.
pub fn bagging_sweep(by_trunk: &[(usize, Vec<BagRun>)], ms: &[usize], fpr_targets: &[f64]) -> Result<Vec<SweepRow>> {
    if ms.is_empty() || ms.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("bag sizes must be strictly increasing, got {ms:?}")));
    }
    let mut rows = Vec::new();
    for (width, runs) in by_trunk {
        if runs.is_empty() {
            return Err(Error::Empty("bagging sweep runs"));
        }
        for &m in ms {
            let tprs: Vec<Vec<f64>> = runs
                .iter()
                .map(|r| {
                    let c = roc_from_cubes(&r.members, &r.holdout, m)?;
                    Ok(fpr_targets.iter().map(|&f| c.tpr_at_fpr(f)).collect())
                })
                .collect::<Result<_>>()?;
            for (j, &fpr) in fpr_targets.iter().enumerate() {
                let vals: Vec<f64> = tprs.iter().map(|t| t[j]).collect();
                let (mean, std) = mean_std(&vals);
                rows.push(SweepRow {
                    m,
                    trunk_width: *width,
                    fpr,
                    mean_tpr: mean,
                    std_tpr: std,
                    runs: runs.len(),
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{AttackerBag, BagTrainer, RegressorConfig};
    use crate::ndcore::{SgdConfig, Tensor};

    fn run(seed: u64) -> (AttackerBag, BagRun) {
        let n = 60;
        let x = Tensor::new(vec![n, 2], (0..2 * n).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let s: Vec<f64> = (0..n).map(|i| 1.0 + (i % 11) as f64).collect();
        let (net, sgd) = (RegressorConfig::new(3), SgdConfig::new(0.05, 0.9, 8, 20, 0));
        let bag = BagTrainer {
            features: &x,
            scores: &s,
            alphas: &[0.1, 0.3, 0.5],
            net: &net,
            sgd: &sgd,
        }
        .train(3, seed)
        .unwrap();
        let members: Vec<f64> = s.iter().map(|v| v * 0.5).collect();
        let r = BagRun {
            members: bag.verdicts(&x, &members).unwrap(),
            holdout: bag.verdicts(&x, &s).unwrap(),
        };
        (bag, r)
    }

    #[test]
    fn identical_runs_have_zero_spread() {
        let rows = bagging_sweep(&[(3, vec![run(1).1, run(1).1, run(1).1])], &[1, 3], &[0.1, 0.5]).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.std_tpr == 0.0 && r.runs == 3));
    }

    #[test]
    fn single_size_single_seed_is_single_attacker() {
        let (_, r) = run(2);
        let rows = bagging_sweep(&[(3, vec![r.clone()])], &[1], &[0.5]).unwrap();
        let direct = roc_from_cubes(&r.members, &r.holdout, 1).unwrap().tpr_at_fpr(0.5);
        assert_eq!(rows[0].mean_tpr, direct);
        assert!(bagging_sweep(&[(3, vec![r.clone()])], &[3, 1], &[0.5]).is_err());
        assert!(bagging_sweep(&[(3, vec![r])], &[4], &[0.5]).is_err());
    }
}
