use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::regressor::{
    train_quantile, validate_alphas, QuantileRegressor, RegressorConfig, RegressorRecord, ScoreTransform,
};
use crate::error::{Error, Result};
use crate::ndcore::{SgdConfig, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    In,
    Out,
}

impl Verdict {
    pub fn is_in(self) -> bool {
        self == Verdict::In
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub verdict: Verdict,
    /// IN votes (0 or 1 for a single attacker).
    pub votes: usize,
    /// Per-attacker thresholds on the transformed score scale.
    pub thresholds: Vec<f64>,
}

fn single_row(features: &[f64]) -> Result<Tensor> {
    Tensor::new(vec![1, features.len()], features.to_vec())
}

/// Declares IN iff the transformed score is at most the predicted
/// α-quantile for this example. Equality counts as IN.
pub fn attack_single(reg: &QuantileRegressor, score: f64, features: &[f64], alpha: f64) -> Result<Decision> {
    let k = reg.alpha_index(alpha)?;
    let q = reg.predict(&single_row(features)?)?.row(0)[k];
    let inside = reg.transform().apply(score)? <= q;
    Ok(Decision {
        verdict: if inside { Verdict::In } else { Verdict::Out },
        votes: usize::from(inside),
        thresholds: vec![q],
    })
}

/// Majority rule of the bag: IN iff `votes ≥ m/2`.
pub fn majority(votes: usize, m: usize) -> Verdict {
    if 2 * votes >= m {
        Verdict::In
    } else {
        Verdict::Out
    }
}

/// Seed of bag member `index`, derived from the master seed by stream
/// counter so a bag can grow without disturbing existing members.
pub fn member_seed(master_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64 + 1);
    rng.next_u64()
}

/// `n` indices drawn uniformly with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// A bag of weak attackers, each trained on its own bootstrap resample of
/// the public data.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackerBag {
    pub members: Vec<QuantileRegressor>,
    pub bootstrap_seeds: Vec<u64>,
    pub master_seed: u64,
}

/// Training data and settings shared by every member of a bag.
pub struct BagTrainer<'a> {
    pub features: &'a Tensor,
    pub scores: &'a [f64],
    pub alphas: &'a [f64],
    pub net: &'a RegressorConfig,
    pub sgd: &'a SgdConfig,
}

impl BagTrainer<'_> {
    fn train_member(&self, seed: u64) -> Result<QuantileRegressor> {
        let idx = bootstrap_indices(self.scores.len(), seed);
        let x = self.features.gather_rows(&idx);
        let y: Vec<f64> = idx.iter().map(|&i| self.scores[i]).collect();
        let cfg = SgdConfig {
            seed,
            ..self.sgd.clone()
        };
        train_quantile(&x, &y, self.alphas, self.net, &cfg)
    }

    /// Trains `m ≥ 1` members from `master_seed`; members train in parallel.
    pub fn train(&self, m: usize, master_seed: u64) -> Result<AttackerBag> {
        if m == 0 {
            return Err(Error::Config("a bag needs at least one attacker".into()));
        }
        let mut bag = AttackerBag {
            members: Vec::new(),
            bootstrap_seeds: Vec::new(),
            master_seed,
        };
        self.grow(&mut bag, m)?;
        Ok(bag)
    }

    /// Adds members until the bag has `m`; existing members are untouched.
    pub fn grow(&self, bag: &mut AttackerBag, m: usize) -> Result<()> {
        if self.scores.is_empty() {
            return Err(Error::Empty("quantile training set"));
        }
        let start = bag.members.len();
        let seeds: Vec<u64> = (start..m).map(|i| member_seed(bag.master_seed, i)).collect();
        let trained: Vec<QuantileRegressor> = seeds
            .par_iter()
            .map(|&s| self.train_member(s))
            .collect::<Result<_>>()?;
        bag.members.extend(trained);
        bag.bootstrap_seeds.extend(seeds);
        Ok(())
    }
}

impl AttackerBag {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn alphas(&self) -> &[f64] {
        self.members[0].alphas()
    }

    /// Bag made of the first `m` members.
    pub fn prefix(&self, m: usize) -> AttackerBag {
        AttackerBag {
            members: self.members[..m].to_vec(),
            bootstrap_seeds: self.bootstrap_seeds[..m].to_vec(),
            master_seed: self.master_seed,
        }
    }

    pub fn decide(&self, score: f64, features: &[f64], alpha: f64) -> Result<Decision> {
        let mut votes = 0;
        let mut thresholds = Vec::with_capacity(self.len());
        for reg in &self.members {
            let d = attack_single(reg, score, features, alpha)?;
            votes += d.votes;
            thresholds.extend(d.thresholds);
        }
        Ok(Decision {
            verdict: majority(votes, self.len()),
            votes,
            thresholds,
        })
    }

    /// Every member's verdict for every example at every level.
    pub fn verdicts(&self, features: &Tensor, scores: &[f64]) -> Result<VerdictCube> {
        if self.is_empty() {
            return Err(Error::Empty("attacker bag"));
        }
        if features.rows() != scores.len() {
            return Err(Error::Dimension {
                op: "AttackerBag::verdicts",
                expected: vec![scores.len()],
                got: features.shape().to_vec(),
            });
        }
        let k = self.alphas().len();
        let n = scores.len();
        let mut data = Vec::with_capacity(self.len() * n * k);
        for reg in &self.members {
            let t: Vec<f64> = scores
                .iter()
                .map(|&s| reg.transform().apply(s))
                .collect::<Result<_>>()?;
            let q = reg.predict(features)?;
            for (i, &ti) in t.iter().enumerate() {
                data.extend(q.row(i).iter().map(|&qi| ti <= qi));
            }
        }
        Ok(VerdictCube {
            members: self.len(),
            examples: n,
            alphas: self.alphas().to_vec(),
            data,
        })
    }
}

/// Boolean IN verdicts indexed by `(member, example, level)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VerdictCube {
    pub members: usize,
    pub examples: usize,
    pub alphas: Vec<f64>,
    data: Vec<bool>,
}

impl VerdictCube {
    pub fn get(&self, member: usize, example: usize, level: usize) -> bool {
        let k = self.alphas.len();
        self.data[(member * self.examples + example) * k + level]
    }

    /// IN votes among the first `m` members.
    pub fn votes(&self, m: usize, example: usize, level: usize) -> usize {
        (0..m).filter(|&j| self.get(j, example, level)).count()
    }

    /// Majority verdict of the first `m` members.
    pub fn verdict(&self, m: usize, example: usize, level: usize) -> Verdict {
        majority(self.votes(m, example, level), m)
    }

    /// Fraction of examples declared IN by the first `m` members at `level`.
    pub fn in_rate(&self, m: usize, level: usize) -> f64 {
        let hits = (0..self.examples).filter(|&i| self.verdict(m, i, level).is_in()).count();
        hits as f64 / self.examples as f64
    }
}

pub const BUNDLE_VERSION: u32 = 1;

/// `manifest.json` of an attacker bundle directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub alphas: Vec<f64>,
    pub m: usize,
    pub master_seed: u64,
    pub score_transform: ScoreTransform,
    pub trunk_width: usize,
    pub trunk_blocks: usize,
    pub bootstrap_seeds: Vec<u64>,
    #[serde(default)]
    pub config_hash: String,
}

fn member_file(i: usize) -> String {
    format!("member_{i:03}.json")
}

/// Writes `manifest.json` plus one checkpoint per member into `dir`.
pub fn save_bundle(dir: &Path, bag: &AttackerBag, net: &RegressorConfig, sgd: &SgdConfig, config_hash: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = BundleManifest {
        format_version: BUNDLE_VERSION,
        alphas: bag.alphas().to_vec(),
        m: bag.len(),
        master_seed: bag.master_seed,
        score_transform: net.transform,
        trunk_width: net.width,
        trunk_blocks: net.blocks,
        bootstrap_seeds: bag.bootstrap_seeds.clone(),
        config_hash: config_hash.to_string(),
    };
    for (i, (reg, &seed)) in bag.members.iter().zip(&bag.bootstrap_seeds).enumerate() {
        let rec = reg.to_record(seed, sgd.steps);
        fs::write(dir.join(member_file(i)), serde_json::to_vec(&rec)?)?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<(BundleManifest, AttackerBag)> {
    let manifest: BundleManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.format_version != BUNDLE_VERSION {
        return Err(Error::Contract(format!(
            "unsupported bundle version {}",
            manifest.format_version
        )));
    }
    validate_alphas(&manifest.alphas)?;
    let members = (0..manifest.m)
        .map(|i| {
            let rec: RegressorRecord = serde_json::from_slice(&fs::read(dir.join(member_file(i)))?)?;
            QuantileRegressor::from_record(&rec)
        })
        .collect::<Result<Vec<_>>>()?;
    if members.iter().any(|r| r.alphas() != manifest.alphas.as_slice()) {
        return Err(Error::Contract("bundle member levels disagree with manifest".into()));
    }
    let bag = AttackerBag {
        members,
        bootstrap_seeds: manifest.bootstrap_seeds.clone(),
        master_seed: manifest.master_seed,
    };
    Ok((manifest, bag))
}
