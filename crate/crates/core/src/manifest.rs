//! Run manifests: what a command read, what it wrote and how to repeat it.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path, display: PathBuf) -> Result<Self> {
        Ok(Self { path: display, sha256: file_digest(path)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Absolute path of the config file.
    pub config: PathBuf,
    pub config_digest: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
    pub inputs: Vec<FileRecord>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileRecord>,
    pub version: String,
    /// Command-line options, enough to repeat the run.
    #[serde(default)]
    pub options: serde_json::Value,
}

pub fn digest(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(digest(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: &Path, config_bytes: &[u8], seed: u64) -> Self {
        let config = std::path::absolute(config).unwrap_or_else(|_| config.to_path_buf());
        Self {
            command: command.to_string(),
            config,
            config_digest: digest(config_bytes),
            seed,
            started: now(),
            finished: 0,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            options: serde_json::Value::Null,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let shown = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
        self.inputs.push(FileRecord::of(path, shown)?);
        Ok(())
    }

    /// Records the files `names` written into `out`, in name order.
    pub fn finish(&mut self, out: &Path, names: &[PathBuf]) -> Result<()> {
        let mut names = names.to_vec();
        names.sort();
        names.dedup();
        self.outputs = names.into_iter().map(|n| FileRecord::of(&out.join(&n), n)).collect::<Result<_>>()?;
        self.finished = now();
        Ok(())
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let path = out.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Differences in inputs between this manifest and the files on disk.
    pub fn stale_inputs(&self) -> Vec<String> {
        self.inputs
            .iter()
            .filter_map(|r| match file_digest(&r.path) {
                Ok(d) if d == r.sha256 => None,
                Ok(_) => Some(format!("{} has changed", r.path.display())),
                Err(e) => Some(e.to_string()),
            })
            .collect()
    }

    /// Outputs of `other` that differ from this manifest's, by name.
    pub fn output_differences(&self, other: &RunManifest) -> Vec<String> {
        let mut diffs = Vec::new();
        for r in &self.outputs {
            match other.outputs.iter().find(|o| o.path == r.path) {
                Some(o) if o.sha256 == r.sha256 => {}
                Some(_) => diffs.push(format!("{} differs", r.path.display())),
                None => diffs.push(format!("{} was not written", r.path.display())),
            }
        }
        for o in &other.outputs {
            if !self.outputs.iter().any(|r| r.path == o.path) {
                diffs.push(format!("{} is new", o.path.display()));
            }
        }
        diffs
    }
}
