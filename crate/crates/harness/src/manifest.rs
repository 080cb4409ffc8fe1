use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::HarnessError;

/// Everything needed to repeat a run: pass this file back as `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    /// sha256 of input files (checkpoints, landscapes, traces).
    pub inputs: BTreeMap<String, String>,
    /// sha256 of every file written, keyed by path relative to the output
    /// directory.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// An existing output directory; records the hash of everything written.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl OutputDir {
    /// The directory must already exist; it is never created implicitly.
    pub fn open(root: &Path) -> Result<Self, HarnessError> {
        if !root.is_dir() {
            return Err(HarnessError::CannotWrite {
                path: root.to_path_buf(),
                reason: "output directory does not exist".into(),
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `relative` (forward slashes), creating
    /// subdirectories as needed.
    pub fn write(&mut self, relative: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        let path = self.root.join(relative);
        let fail = |e: std::io::Error| HarnessError::CannotWrite {
            path: path.clone(),
            reason: e.to_string(),
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(fail)?;
        }
        fs::write(&path, bytes).map_err(fail)?;
        self.artifacts.insert(relative.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<(), HarnessError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(relative, text.as_bytes())
    }

    /// Writes `manifest.json` covering every artifact written so far.
    pub fn finish(
        mut self,
        command: &str,
        config: &ExperimentConfig,
        inputs: BTreeMap<String, String>,
    ) -> Result<Manifest, HarnessError> {
        let manifest = Manifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: config.seeds[0],
            config: config.clone(),
            inputs,
            artifacts: std::mem::take(&mut self.artifacts),
        };
        self.write_json("manifest.json", &manifest)?;
        Ok(manifest)
    }
}
