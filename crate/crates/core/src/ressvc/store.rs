//! Path-addressed object storage behind the resource server.

use std::collections::HashMap;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::capmodel::ResourcePath;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no object at {0}")]
    NotFound(ResourcePath),
    #[error("storage failure: {0}")]
    Io(#[from] std::io::Error),
}

pub trait ObjectStore: Send + Sync {
    fn get(&self, path: &ResourcePath) -> Result<Vec<u8>, StoreError>;
    /// Replaces the object at `path`. Readers see either the old or the new
    /// bytes, never a mix.
    fn put(&self, path: &ResourcePath, bytes: &[u8]) -> Result<(), StoreError>;
    fn delete(&self, path: &ResourcePath) -> Result<(), StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    objects: Mutex<HashMap<ResourcePath, Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ObjectStore for MemoryStore {
    fn get(&self, path: &ResourcePath) -> Result<Vec<u8>, StoreError> {
        let objects = self.objects.lock().expect("store poisoned");
        objects
            .get(path)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(path.clone()))
    }

    fn put(&self, path: &ResourcePath, bytes: &[u8]) -> Result<(), StoreError> {
        self.objects
            .lock()
            .expect("store poisoned")
            .insert(path.clone(), bytes.to_vec());
        Ok(())
    }

    fn delete(&self, path: &ResourcePath) -> Result<(), StoreError> {
        match self.objects.lock().expect("store poisoned").remove(path) {
            Some(_) => Ok(()),
            None => Err(StoreError::NotFound(path.clone())),
        }
    }
}

/// One file per object under `root`, named by the SHA-256 of the path so a
/// path can be both an object and a prefix of other objects.
#[derive(Debug)]
pub struct FsStore {
    root: PathBuf,
}

impl FsStore {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(FsStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn object_file(&self, path: &ResourcePath) -> PathBuf {
        self.root.join(hex::encode(Sha256::digest(path.as_str())))
    }
}

fn not_found(err: std::io::Error, path: &ResourcePath) -> StoreError {
    if err.kind() == ErrorKind::NotFound {
        StoreError::NotFound(path.clone())
    } else {
        StoreError::Io(err)
    }
}

impl ObjectStore for FsStore {
    fn get(&self, path: &ResourcePath) -> Result<Vec<u8>, StoreError> {
        std::fs::read(self.object_file(path)).map_err(|err| not_found(err, path))
    }

    fn put(&self, path: &ResourcePath, bytes: &[u8]) -> Result<(), StoreError> {
        let tmp_name = format!(".tmp-{}", hex::encode(rand::random::<[u8; 8]>()));
        let tmp = self.root.join(tmp_name);
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        std::fs::rename(&tmp, self.object_file(path))?;
        Ok(())
    }

    fn delete(&self, path: &ResourcePath) -> Result<(), StoreError> {
        std::fs::remove_file(self.object_file(path)).map_err(|err| not_found(err, path))
    }
}
