//! Service configuration: one TOML file, with environment overrides for the
//! listen address, data directory and token file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stancekit::classifier::{FeatureConfig, TrainConfig};

use crate::error::ServiceError;

pub const ENV_LISTEN: &str = "STANCEKIT_LISTEN";
pub const ENV_DATA_DIR: &str = "STANCEKIT_DATA_DIR";
pub const ENV_TOKEN_FILE: &str = "STANCEKIT_TOKEN_FILE";

pub const DEFAULT_QUESTION: &str =
    "Which best describes this text: a positive, neutral, or negative stance toward gender equality?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub token_file: PathBuf,
    /// Line-delimited JSON documents forming the sampling pool.
    pub corpus: PathBuf,
    /// Embedding model for guided rounds and embedding features.
    pub embedding: Option<PathBuf>,
    /// Paired documents added per annotator pair per round.
    pub overlap_per_round: usize,
    pub seed: u64,
    pub question: String,
    pub features: FeatureConfig,
    pub train: TrainConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: "data".into(),
            token_file: "tokens.txt".into(),
            corpus: "corpus.jsonl".into(),
            embedding: None,
            overlap_per_round: 100,
            seed: 0,
            question: DEFAULT_QUESTION.into(),
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Reads `path`, resolves relative paths against its directory and applies env overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::bad_request(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ServiceError::bad_request(format!("config: {e}")))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative(base);
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.token_file);
        fix(&mut self.corpus);
        if let Some(e) = self.embedding.as_mut() {
            fix(e);
        }
    }

    /// Overrides from the environment; `get` is injectable for tests.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get(ENV_LISTEN) {
            self.listen = v;
        }
        if let Some(v) = get(ENV_DATA_DIR) {
            self.data_dir = v.into();
        }
        if let Some(v) = get(ENV_TOKEN_FILE) {
            self.token_file = v.into();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Labels documents and submits exemplars.
    Annotator,
    /// Opens and closes rounds; receives no assignments.
    Coordinator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    pub annotator_id: String,
    pub role: Role,
}

/// Bearer tokens mapped to pseudonymous ids.
///
/// One entry per line: `TOKEN ANNOTATOR_ID [annotator|coordinator]`.
/// Blank lines and lines starting with `#` are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tokens(BTreeMap<String, Principal>);

impl Tokens {
    pub fn parse(text: &str) -> Result<Self, ServiceError> {
        let mut map = BTreeMap::new();
        let mut ids = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let role = match parts.get(2).copied() {
                None | Some("annotator") => Role::Annotator,
                Some("coordinator") => Role::Coordinator,
                Some(other) => {
                    return Err(ServiceError::bad_request(format!("token file line {}: unknown role {other:?}", n + 1)))
                }
            };
            if parts.len() < 2 || parts.len() > 3 {
                return Err(ServiceError::bad_request(format!("token file line {}: expected TOKEN ID [ROLE]", n + 1)));
            }
            if !ids.insert(parts[1]) {
                return Err(ServiceError::bad_request(format!("token file line {}: duplicate id {}", n + 1, parts[1])));
            }
            let principal = Principal {
                annotator_id: parts[1].to_string(),
                role,
            };
            if map.insert(parts[0].to_string(), principal).is_some() {
                return Err(ServiceError::bad_request(format!("token file line {}: duplicate token", n + 1)));
            }
        }
        Ok(Self(map))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::bad_request(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn lookup(&self, token: &str) -> Option<&Principal> {
        self.0.get(token)
    }

    /// Ids that receive assignments, sorted.
    pub fn annotators(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .0
            .values()
            .filter(|p| p.role == Role::Annotator)
            .map(|p| p.annotator_id.clone())
            .collect();
        ids.sort();
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides_file_values() {
        let mut cfg: ServiceConfig = toml::from_str("listen = \"0.0.0.0:1\"\ndata_dir = \"d\"").unwrap();
        cfg.resolve_relative(Path::new("/etc/sk"));
        assert_eq!(cfg.data_dir, PathBuf::from("/etc/sk/d"));
        cfg.apply_env(|k| (k == ENV_LISTEN).then(|| "127.0.0.1:9".to_string()));
        assert_eq!(cfg.listen, "127.0.0.1:9");
        assert_eq!(cfg.data_dir, PathBuf::from("/etc/sk/d"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ServiceConfig>("lisen = \"x\"").is_err());
    }

    #[test]
    fn token_file() {
        let t = Tokens::parse("# comment\nabc ann1\ndef ann2 annotator\nxyz boss coordinator\n").unwrap();
        assert_eq!(t.annotators(), vec!["ann1", "ann2"]);
        assert_eq!(t.lookup("xyz").unwrap().role, Role::Coordinator);
        assert!(t.lookup("nope").is_none());
        assert!(Tokens::parse("a x\na y").is_err());
        assert!(Tokens::parse("a x\nb x").is_err());
        assert!(Tokens::parse("a x admin").is_err());
    }
}
