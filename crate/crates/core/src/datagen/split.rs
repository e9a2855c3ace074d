use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::Example;
use crate::error::{Error, Result};

/// Members train the target model; `public` is the attacker's auxiliary
/// nonmember data; `holdout` is reserved nonmember data for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub members: Vec<Example>,
    pub public: Vec<Example>,
    pub holdout: Vec<Example>,
}

/// Set sizes for a split of `n` examples with half of them members.
pub fn split_sizes(n: usize, public_fraction: f64) -> Result<(usize, usize, usize)> {
    split_sizes_with(n, None, public_fraction)
}

/// Set sizes with an explicit member count; `None` means `⌊n/2⌋`.
pub fn split_sizes_with(n: usize, members: Option<usize>, public_fraction: f64) -> Result<(usize, usize, usize)> {
    if !(public_fraction > 0.0 && public_fraction < 1.0) {
        return Err(Error::Config(format!(
            "public fraction must lie in (0, 1), got {public_fraction}"
        )));
    }
    if n < 4 {
        return Err(Error::TooSmall(format!("need at least 4 examples to split, got {n}")));
    }
    let members = members.unwrap_or(n / 2);
    if members == 0 || members + 2 > n {
        return Err(Error::Config(format!(
            "member count must leave at least two nonmembers, got {members} of {n}"
        )));
    }
    let rest = n - members;
    let public = ((rest as f64 * public_fraction).round() as usize).clamp(1, rest - 1);
    Ok((members, public, rest - public))
}

/// Seeded shuffle, then the first half becomes members and the remainder
/// is divided between public and holdout.
pub fn split(data: Vec<Example>, public_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    split_with(data, None, public_fraction, seed)
}

/// As [`split`], with an explicit member count.
pub fn split_with(data: Vec<Example>, members: Option<usize>, public_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    let (m, p, _) = split_sizes_with(data.len(), members, public_fraction)?;
    let mut data = data;
    data.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let holdout = data.split_off(m + p);
    let public = data.split_off(m);
    Ok(DatasetSplit {
        members: data,
        public,
        holdout,
    })
}
