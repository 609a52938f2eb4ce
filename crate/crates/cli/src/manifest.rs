//! Run directories: every artifact-producing command writes under
//! `<runs-dir>/<hash>/`, where the hash covers the tool version, command,
//! parameters, seed and the content of every input file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub params: serde_json::Value,
    pub inputs: BTreeMap<String, InputDigest>,
    /// File names relative to the run directory.
    pub outputs: Vec<String>,
}

pub fn digest_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, params: &impl Serialize) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            params: serde_json::to_value(params).expect("arguments serialize"),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(mut self, name: impl Into<String>, path: &Path) -> Result<Self, CliError> {
        let sha256 = digest_file(path)?;
        self.inputs.insert(
            name.into(),
            InputDigest {
                path: path.to_path_buf(),
                sha256,
            },
        );
        Ok(self)
    }

    pub fn inputs<'a>(mut self, name: &str, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<Self, CliError> {
        for (i, p) in paths.into_iter().enumerate() {
            self = self.input(format!("{name}[{i}]"), p)?;
        }
        Ok(self)
    }

    pub fn optional(self, name: &str, path: Option<&PathBuf>) -> Result<Self, CliError> {
        match path {
            Some(p) => self.input(name, p),
            None => Ok(self),
        }
    }

    pub fn outputs(mut self, names: &[&str]) -> Self {
        self.outputs = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Creates (or reuses) the run directory and writes `manifest.json` into it.
    pub fn create_dir(&self, root: &Path) -> Result<RunDir, CliError> {
        let dir = root.join(&self.hash()[..16]);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        let path = dir.join("manifest.json");
        std::fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(RunDir { dir })
    }
}

pub struct RunDir {
    pub dir: PathBuf,
}

impl RunDir {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}
