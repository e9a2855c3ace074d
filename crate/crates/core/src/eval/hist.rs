use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attack::ScoreTransform;
use crate::error::{Error, Result};

/// Fixed-width histogram; the last bin is closed on the right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    fn fill(edges: &[f64], values: &[f64]) -> Self {
        let bins = edges.len() - 1;
        let (lo, hi) = (edges[0], edges[bins]);
        let mut counts = vec![0; bins];
        for &v in values {
            let k = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
            counts[k.min(bins - 1)] += 1;
        }
        Self {
            edges: edges.to_vec(),
            counts,
        }
    }
}

/// Histograms of `−ln(score)` for members and holdout on shared bin edges.
pub fn score_histograms(members: &[f64], holdout: &[f64], bins: usize) -> Result<(Histogram, Histogram)> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let neg_log = |s: &[f64]| -> Result<Vec<f64>> {
        s.iter().map(|&v| ScoreTransform::Log.apply(v).map(|l| -l)).collect()
    };
    let (m, h) = (neg_log(members)?, neg_log(holdout)?);
    let all = m.iter().chain(&h);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return Err(Error::Empty("histogram input"));
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + (hi - lo) * i as f64 / bins as f64 })
        .collect();
    Ok((Histogram::fill(&edges, &m), Histogram::fill(&edges, &h)))
}

pub fn write_histograms_csv<W: Write>(w: W, members: &Histogram, holdout: &Histogram) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_lo", "bin_hi", "members", "holdout"])?;
    for k in 0..members.counts.len() {
        out.write_record([
            members.edges[k].to_string(),
            members.edges[k + 1].to_string(),
            members.counts[k].to_string(),
            holdout.counts[k].to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_scores_fill_one_bin() {
        let (m, h) = score_histograms(&[0.2; 5], &[0.2; 3], 10).unwrap();
        assert_eq!(m.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!((m.total(), h.total()), (5, 3));
    }

    #[test]
    fn masses_and_alignment() {
        let m: Vec<f64> = (1..=50).map(|i| f64::from(i) * 1e-3).collect();
        let h: Vec<f64> = (1..=70).map(|i| f64::from(i) * 1e-2).collect();
        let (hm, hh) = score_histograms(&m, &h, 7).unwrap();
        assert_eq!(hm.edges, hh.edges);
        assert_eq!(hm.total(), 50);
        assert_eq!(hh.total(), 70);
        assert!(score_histograms(&[0.0], &[1.0], 4).is_err());
        let mut buf = Vec::new();
        write_histograms_csv(&mut buf, &hm, &hh).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bin_lo,bin_hi,members,holdout\n"));
        assert_eq!(text.lines().count(), 8);
    }
}
