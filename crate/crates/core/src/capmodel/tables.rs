use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::{CapabilitySet, Operation, ResourcePath};
use crate::jose::Jwk;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("`{0}` is not a 64-character lowercase hex thumbprint")]
    InvalidThumbprint(String),
    #[error("no resource-table prefix covers `{0}`")]
    NoMatchingPrefix(String),
}

/// Lowercase hex SHA-256 key thumbprint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Thumbprint(String);

impl Thumbprint {
    pub fn parse(raw: &str) -> Result<Self, TableError> {
        let ok = raw.len() == 64
            && raw
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if ok {
            Ok(Thumbprint(raw.to_string()))
        } else {
            Err(TableError::InvalidThumbprint(raw.to_string()))
        }
    }

    pub fn of(key: &Jwk) -> Self {
        Thumbprint(key.thumbprint())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Thumbprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Thumbprint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Thumbprint::parse(&String::deserialize(d)?).map_err(D::Error::custom)
    }
}

/// Where a credential's revocation bit lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CredentialStatus {
    pub status_list_url: String,
    pub revocation_list_index: u64,
}

/// Authorization-server map from client key thumbprint to granted capabilities.
///
/// Config layout: `{ "<thumbprint>": { "<path>": ["read", "write"] } }`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessTable {
    entries: BTreeMap<Thumbprint, CapabilitySet>,
}

impl AccessTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn grant(&mut self, subject: Thumbprint, caps: CapabilitySet) {
        self.entries.insert(subject, caps);
    }

    pub fn revoke_subject(&mut self, subject: &Thumbprint) -> Option<CapabilitySet> {
        self.entries.remove(subject)
    }

    pub fn get(&self, subject: &Thumbprint) -> Option<&CapabilitySet> {
        self.entries.get(subject)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Thumbprint, &CapabilitySet)> {
        self.entries.iter()
    }
}

fn path_map(caps: &CapabilitySet) -> BTreeMap<&str, Vec<Operation>> {
    caps.iter()
        .map(|c| (c.path().as_str(), c.operations().iter().copied().collect()))
        .collect()
}

impl Serialize for AccessTable {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<&Thumbprint, _> =
            self.entries.iter().map(|(k, v)| (k, path_map(v))).collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for AccessTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(AccessTable {
            entries: BTreeMap::deserialize(d)?,
        })
    }
}

/// The authority that governs a resource prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityDescriptor {
    pub url: String,
    pub jwk: Jwk,
}

/// Resource-server map from path prefix to governing authority, resolved by
/// longest segment-prefix match.
///
/// Config layout: `{ "<prefix>": { "url": "...", "jwk": {...} } }`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceTable {
    entries: BTreeMap<ResourcePath, AuthorityDescriptor>,
}

impl ResourceTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `prefix`, replacing any previous authority for it.
    pub fn insert(&mut self, prefix: ResourcePath, authority: AuthorityDescriptor) {
        self.entries.insert(prefix, authority);
    }

    pub fn lookup_authority(
        &self,
        path: &ResourcePath,
    ) -> Result<&AuthorityDescriptor, TableError> {
        lookup_authority(self, path)
    }

    /// Finds an authority by its URL (the `iss` of its tokens).
    pub fn authority_by_url(&self, url: &str) -> Option<&AuthorityDescriptor> {
        self.entries.values().find(|a| a.url == url)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ResourcePath, &AuthorityDescriptor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Descriptor of the longest prefix covering `path`.
pub fn lookup_authority<'t>(
    table: &'t ResourceTable,
    path: &ResourcePath,
) -> Result<&'t AuthorityDescriptor, TableError> {
    table
        .entries
        .iter()
        .filter(|(prefix, _)| prefix.is_prefix_of(path))
        .max_by_key(|(prefix, _)| prefix.segments().count())
        .map(|(_, authority)| authority)
        .ok_or_else(|| TableError::NoMatchingPrefix(path.to_string()))
}
