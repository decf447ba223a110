//! Run manifests: what was run, on which inputs, with which parameters.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cli::Command;
use crate::error::{CliError, Result};
use crate::format;

/// File name of the manifest written next to a command's outputs.
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileHash {
    pub fn of_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(FileHash { path: path.to_path_buf(), sha256: sha256_hex(&bytes) })
    }

    pub fn of_bytes(path: impl Into<PathBuf>, bytes: &[u8]) -> Self {
        FileHash { path: path.into(), sha256: sha256_hex(bytes) }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Subcommand name.
    pub command: String,
    pub wall_time_s: f64,
    /// Planner search time, for commands that plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_wall_time_s: Option<f64>,
    /// Input files as given on the command line.
    pub inputs: Vec<FileHash>,
    /// Output files relative to the output directory.
    pub outputs: Vec<FileHash>,
    /// Every argument of the run, defaults included.
    pub parameters: Command,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        toml::from_str(&format::read_text(path)?).map_err(|e| CliError::parse(path, e.message().trim_end()))
    }

    pub fn to_toml(&self) -> String {
        format::to_toml(self)
    }

    /// Fails unless every input still has its recorded hash.
    pub fn verify_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let now = FileHash::of_file(&input.path)?;
            if now.sha256 != input.sha256 {
                return Err(CliError::Manifest(format!(
                    "input {} changed (recorded {}, found {})",
                    input.path.display(),
                    input.sha256,
                    now.sha256
                )));
            }
        }
        Ok(())
    }

    /// Fails unless `other` produced the same output files byte for byte.
    pub fn verify_outputs(&self, other: &RunManifest) -> Result<()> {
        if self.outputs != other.outputs {
            let differing: Vec<String> = self
                .outputs
                .iter()
                .filter(|o| !other.outputs.contains(o))
                .map(|o| o.path.display().to_string())
                .collect();
            return Err(CliError::Manifest(format!("outputs differ from the recorded run: {}", differing.join(", "))));
        }
        Ok(())
    }
}
