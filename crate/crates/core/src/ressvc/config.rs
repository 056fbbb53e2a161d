use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    AuditLog, FsStore, HttpAuthorityClient, ResourceServer, ResourceServerConfig, RevocationMode,
    DEFAULT_CACHE_MAX_AGE_SECS,
};
use crate::capmodel::ResourceTable;

#[derive(Debug, Error)]
pub enum ResourceConfigError {
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
}

/// On-disk resource-server configuration. Relative paths resolve against
/// the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResourceFileConfig {
    pub resource_table: ResourceTable,
    pub storage_root: PathBuf,
    #[serde(default)]
    pub revocation_mode: RevocationMode,
    #[serde(default = "default_max_age")]
    pub cache_max_age_secs: i64,
    #[serde(default)]
    pub public_url: Option<String>,
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
}

fn default_max_age() -> i64 {
    DEFAULT_CACHE_MAX_AGE_SECS
}

impl ResourceFileConfig {
    pub fn load(path: &Path) -> Result<Self, ResourceConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ResourceConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: ResourceFileConfig =
            serde_json::from_str(&text).map_err(|source| ResourceConfigError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if config.storage_root.is_relative() {
            config.storage_root = dir.join(&config.storage_root);
        }
        if let Some(log) = config.audit_log.as_mut().filter(|p| p.is_relative()) {
            *log = dir.join(&*log);
        }
        Ok(config)
    }

    /// Builds a server backed by the filesystem and HTTP authority access.
    pub fn build(self) -> Result<ResourceServer, ResourceConfigError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ResourceConfigError::Io { path, source }
        };
        let store = FsStore::open(&self.storage_root).map_err(io_err(&self.storage_root))?;
        let audit = match &self.audit_log {
            Some(path) => AuditLog::append_to(path).map_err(io_err(path))?,
            None => AuditLog::disabled(),
        };
        let mut config = ResourceServerConfig::new(self.resource_table);
        config.revocation_mode = self.revocation_mode;
        config.cache_max_age_secs = self.cache_max_age_secs;
        config.public_url = self.public_url;
        Ok(ResourceServer::new(
            config,
            Arc::new(store),
            Arc::new(HttpAuthorityClient::new()),
            audit,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("res.json");
        std::fs::write(
            &path,
            r#"{"resource_table": {}, "storage_root": "objects", "audit_log": "audit.jsonl",
                "revocation_mode": "introspection"}"#,
        )
        .unwrap();
        let config = ResourceFileConfig::load(&path).unwrap();
        assert_eq!(config.storage_root, dir.path().join("objects"));
        assert_eq!(config.audit_log, Some(dir.path().join("audit.jsonl")));
        assert_eq!(config.revocation_mode, RevocationMode::Introspection);
        assert_eq!(config.cache_max_age_secs, 60);
        config.build().unwrap();
        assert!(dir.path().join("objects").is_dir());
        assert!(dir.path().join("audit.jsonl").is_file());
    }
}
