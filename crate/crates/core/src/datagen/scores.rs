use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const SCORE_HEADER: [&str; 4] = ["id", "t", "score", "label"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreRecord {
    pub id: u64,
    pub t: usize,
    /// Nonnegative t-error.
    pub score: f64,
    /// `Some(true)` for a training member, `Some(false)` for a nonmember.
    pub label: Option<bool>,
}

/// Per-example scores, one record per `(id, t)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreCache {
    records: Vec<ScoreRecord>,
}

impl ScoreCache {
    pub fn new(records: Vec<ScoreRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            check_score(r.score)?;
            if !seen.insert((r.id, r.t)) {
                return Err(Error::Contract(format!(
                    "duplicate score record for id {} at t = {}",
                    r.id, r.t
                )));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.score).collect()
    }

    pub fn get(&self, id: u64, t: usize) -> Option<&ScoreRecord> {
        self.records.iter().find(|r| r.id == id && r.t == t)
    }

    /// Returns a copy with every label set to `label`.
    pub fn with_label(&self, label: Option<bool>) -> Self {
        Self {
            records: self.records.iter().map(|r| ScoreRecord { label, ..*r }).collect(),
        }
    }

    /// Records ordered by `(id, t)`.
    pub fn sorted(&self) -> Self {
        let mut records = self.records.clone();
        records.sort_by_key(|r| (r.id, r.t));
        Self { records }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SCORE_HEADER)?;
        for r in &self.records {
            let label = match r.label {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            w.write_record([r.id.to_string(), r.t.to_string(), r.score.to_string(), label.into()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV form; `path` is only used for error messages.
    pub fn read_csv<R: Read>(input: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let err = |line: u64, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let header = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
        if header.iter().ne(SCORE_HEADER) {
            return Err(err(1, format!("expected header {}", SCORE_HEADER.join(","))));
        }
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for row in rdr.records() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                err(line, e.to_string())
            })?;
            let line = row.position().map_or(0, |p| p.line());
            let field = |i: usize| row.get(i).unwrap_or("").trim();
            let id = field(0)
                .parse()
                .map_err(|_| err(line, format!("bad id `{}`", field(0))))?;
            let t = field(1)
                .parse()
                .map_err(|_| err(line, format!("bad step `{}`", field(1))))?;
            let score: f64 = field(2)
                .parse()
                .map_err(|_| err(line, format!("bad score `{}`", field(2))))?;
            check_score(score).map_err(|e| err(line, e.to_string()))?;
            let label = match field(3) {
                "" => None,
                "1" => Some(true),
                "0" => Some(false),
                other => return Err(err(line, format!("bad label `{other}`"))),
            };
            if !seen.insert((id, t)) {
                return Err(err(line, format!("duplicate record for id {id} at t = {t}")));
            }
            records.push(ScoreRecord { id, t, score, label });
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(BufReader::new(File::open(path)?), path)
    }
}

fn check_score(score: f64) -> Result<()> {
    if !(score >= 0.0 && score.is_finite()) {
        return Err(Error::Contract(format!("score must be finite and nonnegative, got {score}")));
    }
    Ok(())
}
