use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AuthError, Authority, AuthorityConfig, DEFAULT_CAPACITY, DEFAULT_TOKEN_LIFETIME_SECS};
use crate::capmodel::AccessTable;
use crate::jose::{JoseError, KeyPair};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("cannot load key: {0}")]
    Key(#[from] JoseError),
    #[error(transparent)]
    Authority(#[from] AuthError),
}

/// On-disk authority configuration. `key_file` is resolved relative to the
/// config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthorityFileConfig {
    pub url: String,
    pub key_file: PathBuf,
    pub access_table: AccessTable,
    #[serde(default = "default_capacity")]
    pub status_list_capacity: usize,
    #[serde(default = "default_lifetime")]
    pub token_lifetime_secs: i64,
}

fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}

fn default_lifetime() -> i64 {
    DEFAULT_TOKEN_LIFETIME_SECS
}

impl AuthorityFileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: AuthorityFileConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        if config.key_file.is_relative() {
            if let Some(dir) = path.parent() {
                config.key_file = dir.join(&config.key_file);
            }
        }
        Ok(config)
    }

    pub fn build(self) -> Result<Authority, ConfigError> {
        let key = KeyPair::load(&self.key_file)?;
        let mut config = AuthorityConfig::new(self.url, self.access_table);
        config.status_list_capacity = self.status_list_capacity;
        config.token_lifetime_secs = self.token_lifetime_secs;
        Ok(Authority::new(config, key)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capmodel::{sample_capabilities, Thumbprint};
    use crate::jose::SignatureAlgorithm;

    #[test]
    fn loads_relative_key_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let key = KeyPair::generate(SignatureAlgorithm::EdDsa, Some(b"cfg")).unwrap();
        key.save(&dir.path().join("auth.jwk")).unwrap();
        let mut table = AccessTable::new();
        table.grant(Thumbprint::of(key.public()), sample_capabilities());
        let body = serde_json::json!({
            "url": "https://a.example",
            "key_file": "auth.jwk",
            "access_table": table,
        });
        let path = dir.path().join("auth.json");
        std::fs::write(&path, body.to_string()).unwrap();

        let config = AuthorityFileConfig::load(&path).unwrap();
        assert_eq!(config.status_list_capacity, DEFAULT_CAPACITY);
        assert_eq!(config.token_lifetime_secs, 3600);
        let authority = config.build().unwrap();
        assert_eq!(authority.public_key(), key.public());
        assert_eq!(authority.access_table(), table);
    }
}
