//! On-disk layout: every stage writes under `<stage>/<config hash>/` and
//! finishes by writing `provenance.json`, which marks the artifact complete.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

pub const PROVENANCE_FILE: &str = "provenance.json";

/// First 16 hex digits of SHA-256 over the parent hash, a stage tag, and the
/// canonical JSON of the settings that stage depends on.
pub fn config_hash<T: Serialize>(stage: &str, parent: Option<&str>, settings: &T) -> CliResult<String> {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(parent.unwrap_or("").as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(settings)?);
    Ok(hex::encode(&h.finalize()[..8]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema_version: u32,
    pub stage: String,
    pub config_hash: String,
    #[serde(default)]
    pub parent_hash: Option<String>,
    /// Wall-clock seconds of the stage's main computation.
    #[serde(default)]
    pub seconds: Option<f64>,
}

/// State of a stage directory with respect to the expected hash.
#[derive(Clone, Debug, PartialEq)]
pub enum ArtifactState {
    Missing,
    Fresh(Provenance),
    Stale(String),
}

pub struct Workspace {
    root: PathBuf,
    _lock: LockFile,
}

impl Workspace {
    /// Creates the directory tree if needed and takes the advisory lock.
    pub fn open(root: &Path) -> CliResult<Self> {
        for sub in ["data", "models", "scores", "attackers", "reports"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let lock = LockFile::acquire(&root.join(".lock"))?;
        Ok(Self {
            root: root.to_path_buf(),
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, area: &str, hash: &str) -> PathBuf {
        self.root.join(area).join(hash)
    }
}

/// Reads `dir/provenance.json` and compares it with the expected hash.
pub fn inspect(dir: &Path, expected: &str) -> CliResult<ArtifactState> {
    let path = dir.join(PROVENANCE_FILE);
    if !path.exists() {
        return Ok(ArtifactState::Missing);
    }
    let prov: Provenance = match serde_json::from_slice(&fs::read(&path)?) {
        Ok(p) => p,
        Err(e) => return Ok(ArtifactState::Stale(format!("unreadable provenance: {e}"))),
    };
    if prov.schema_version != SCHEMA_VERSION {
        return Ok(ArtifactState::Stale(format!("schema version {}", prov.schema_version)));
    }
    if prov.config_hash != expected {
        return Ok(ArtifactState::Stale(format!("hash {} != {expected}", prov.config_hash)));
    }
    Ok(ArtifactState::Fresh(prov))
}

/// Upstream artifacts must be fresh; `force` downgrades a stale one to a warning.
pub fn require_fresh(dir: &Path, expected: &str, force: bool) -> CliResult<Option<Provenance>> {
    match inspect(dir, expected)? {
        ArtifactState::Fresh(p) => Ok(Some(p)),
        ArtifactState::Missing => Ok(None),
        ArtifactState::Stale(why) if force => {
            log::warn!("using stale artifact {} ({why})", dir.display());
            Ok(None)
        }
        ArtifactState::Stale(why) => Err(CliError::validation(format!(
            "stale artifact at {} ({why}); rerun with --force to rebuild",
            dir.display()
        ))),
    }
}

pub fn write_provenance(dir: &Path, prov: &Provenance) -> CliResult<()> {
    write_atomic(&dir.join(PROVENANCE_FILE), &serde_json::to_vec_pretty(prov)?)
}

/// Write-then-rename so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Advisory lock held for the life of one command. Released on drop.
struct LockFile {
    path: PathBuf,
}

impl LockFile {
    fn acquire(path: &Path) -> CliResult<Self> {
        match OpenOptions::new().write(true).create_new(true).open(path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path: path.to_path_buf() })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::validation(format!(
                "workspace is locked by another run ({}); delete it if that run is gone",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Creates `path` for writing with a CSV writer.
pub fn csv_writer(path: &Path) -> CliResult<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}
