//! Create-only run directories and their manifests.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub seed: u64,
    /// Resolved configuration as TOML; empty for commands that take none.
    pub config: String,
    pub universe: Vec<String>,
    /// Hashes of the inputs: price data, source files, upstream runs.
    pub inputs: BTreeMap<String, String>,
    /// Parameter hashes of the components this run produced or consumed.
    pub checkpoints: BTreeMap<String, String>,
    pub artifacts: Vec<Artifact>,
    pub started_at: DateTime<Utc>,
    pub wall_clock_secs: f64,
    #[serde(default)]
    pub summary: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn artifact(&self, path: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Claim a fresh directory; an existing one, even half-written, is refused.
    pub fn create(&self, run_id: &str, command: &str, seed: u64) -> CliResult<RunWriter> {
        check_id(run_id)?;
        fs::create_dir_all(&self.root).map_err(CliError::io(format!("creating {}", self.root.display())))?;
        let dir = self.root.join(run_id);
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::RunExists(run_id.to_string()))
            }
            Err(e) => return Err(CliError::io(format!("creating {}", dir.display()))(e)),
        }
        Ok(RunWriter {
            dir,
            clock: Instant::now(),
            manifest: RunManifest {
                run_id: run_id.to_string(),
                command: command.to_string(),
                seed,
                config: String::new(),
                universe: Vec::new(),
                inputs: BTreeMap::new(),
                checkpoints: BTreeMap::new(),
                artifacts: Vec::new(),
                started_at: Utc::now(),
                wall_clock_secs: 0.0,
                summary: BTreeMap::new(),
            },
        })
    }

    pub fn open(&self, run_id: &str) -> CliResult<RunReader> {
        check_id(run_id)?;
        let dir = self.root.join(run_id);
        let text = fs::read_to_string(dir.join(MANIFEST)).map_err(|_| CliError::UnknownRun(run_id.to_string()))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("run `{run_id}` has an unreadable manifest: {e}")))?;
        Ok(RunReader { dir, manifest })
    }
}

fn check_id(run_id: &str) -> CliResult<()> {
    let ok = !run_id.is_empty()
        && run_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !run_id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "run id `{run_id}` may only use letters, digits, `-`, `_` and `.`"
        )))
    }
}

/// A run in progress. Files go in through [`RunWriter::write`] so each is hashed.
pub struct RunWriter {
    dir: PathBuf,
    clock: Instant,
    pub manifest: RunManifest,
}

impl RunWriter {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(CliError::io(format!("creating {}", parent.display())))?;
        }
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(CliError::io(format!("creating {}", path.display())))?;
        f.write_all(bytes).map_err(CliError::io(format!("writing {}", path.display())))?;
        self.manifest.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    /// Register a file some other writer already put inside the run directory.
    pub fn adopt(&mut self, rel: &str) -> CliResult<()> {
        let sha256 = file_sha256(&self.dir.join(rel))?;
        self.manifest.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<PathBuf> {
        let s = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
        self.write(rel, s.as_bytes())
    }

    pub fn summary(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.manifest.summary.insert(key.to_string(), v);
    }

    /// Write the manifest last and make it read-only.
    pub fn finish(mut self) -> CliResult<RunReader> {
        self.manifest.wall_clock_secs = self.clock.elapsed().as_secs_f64();
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Core(e.into()))?;
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(CliError::io(format!("creating {}", path.display())))?;
        f.write_all(text.as_bytes())
            .map_err(CliError::io(format!("writing {}", path.display())))?;
        let mut perms = f.metadata().map_err(CliError::io("manifest metadata"))?.permissions();
        perms.set_readonly(true);
        fs::set_permissions(&path, perms).map_err(CliError::io("sealing manifest"))?;
        Ok(RunReader {
            dir: self.dir,
            manifest: self.manifest,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunReader {
    dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunReader {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Path of a listed artifact whose bytes still match the recorded hash.
    pub fn verified(&self, rel: &str) -> CliResult<PathBuf> {
        let a = self.manifest.artifact(rel).ok_or_else(|| {
            CliError::Config(format!("run `{}` has no artifact `{rel}`", self.manifest.run_id))
        })?;
        let path = self.dir.join(rel);
        if file_sha256(&path)? != a.sha256 {
            return Err(CliError::Data(format!(
                "artifact `{rel}` of run `{}` was modified after the run",
                self.manifest.run_id
            )));
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_are_create_only() {
        let tmp = tempfile::tempdir().unwrap();
        let store = RunStore::new(tmp.path());
        let mut w = store.create("r1", "ingest", 3).unwrap();
        w.write("a.txt", b"hello").unwrap();
        assert!(w.write("a.txt", b"again").is_err());
        let r = w.finish().unwrap();
        assert_eq!(r.manifest.artifacts[0].sha256, sha256_hex(b"hello"));
        assert!(matches!(store.create("r1", "ingest", 3), Err(CliError::RunExists(_))));
        assert_eq!(store.open("r1").unwrap().manifest, r.manifest);
        assert!(matches!(store.open("r2"), Err(CliError::UnknownRun(_))));
        assert!(store.create("../x", "ingest", 0).is_err());

        fs::write(r.path("a.txt"), b"tampered").unwrap();
        assert!(matches!(r.verified("a.txt"), Err(CliError::Data(_))));
    }
}
