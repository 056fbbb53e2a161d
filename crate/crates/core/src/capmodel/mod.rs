//! Path-scoped capabilities and the authority tables that hand them out.
//!
//! A capability on `/data/drone1` covers that path and everything below it,
//! matched on whole segments: it never covers `/data/drone12`.

mod tables;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use tables::{
    lookup_authority, AccessTable, AuthorityDescriptor, CredentialStatus, ResourceTable,
    TableError, Thumbprint,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathError {
    #[error("path is empty")]
    Empty,
    #[error("path must be absolute")]
    NotAbsolute,
    #[error("path contains a `.` or `..` segment")]
    Traversal,
}

/// An absolute resource path with no empty, `.` or `..` segments and no
/// trailing slash (root is `/`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct ResourcePath(String);

impl ResourcePath {
    pub fn parse(raw: &str) -> Result<Self, PathError> {
        normalize_path(raw)
    }

    pub fn root() -> Self {
        ResourcePath("/".into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/').filter(|s| !s.is_empty())
    }

    /// True if `self` equals `other` or is an ancestor of it on segment boundaries.
    pub fn is_prefix_of(&self, other: &ResourcePath) -> bool {
        if self.0 == "/" {
            return true;
        }
        match other.0.strip_prefix(&self.0) {
            Some(rest) => rest.is_empty() || rest.starts_with('/'),
            None => false,
        }
    }
}

impl fmt::Display for ResourcePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ResourcePath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        normalize_path(&raw).map_err(D::Error::custom)
    }
}

/// Collapses repeated slashes and strips a trailing slash. Idempotent.
pub fn normalize_path(raw: &str) -> Result<ResourcePath, PathError> {
    if raw.is_empty() {
        return Err(PathError::Empty);
    }
    if !raw.starts_with('/') {
        return Err(PathError::NotAbsolute);
    }
    let mut out = String::with_capacity(raw.len());
    for segment in raw.split('/').filter(|s| !s.is_empty()) {
        if segment == "." || segment == ".." {
            return Err(PathError::Traversal);
        }
        out.push('/');
        out.push_str(segment);
    }
    if out.is_empty() {
        out.push('/');
    }
    Ok(ResourcePath(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Read,
    Write,
}

impl Operation {
    pub const ALL: [Operation; 2] = [Operation::Read, Operation::Write];

    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Read => "read",
            Operation::Write => "write",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CapabilityError {
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("capability on `{0}` lists no operations")]
    NoOperations(String),
    #[error("duplicate capability path `{0}`")]
    DuplicatePath(String),
    #[error("each capability entry must map exactly one path")]
    MalformedEntry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capability {
    path: ResourcePath,
    operations: BTreeSet<Operation>,
}

impl Capability {
    pub fn new(
        path: ResourcePath,
        operations: impl IntoIterator<Item = Operation>,
    ) -> Result<Self, CapabilityError> {
        let operations: BTreeSet<_> = operations.into_iter().collect();
        if operations.is_empty() {
            return Err(CapabilityError::NoOperations(path.0));
        }
        Ok(Capability { path, operations })
    }

    pub fn path(&self) -> &ResourcePath {
        &self.path
    }

    pub fn operations(&self) -> &BTreeSet<Operation> {
        &self.operations
    }

    pub fn allows(&self, path: &ResourcePath, op: Operation) -> bool {
        self.operations.contains(&op) && self.path.is_prefix_of(path)
    }
}

/// Capabilities with unique paths, kept in insertion order.
///
/// Serializes as the list-of-single-entry-maps layout used inside
/// credentials (`[{"/data/drone1": ["read", "write"]}, ...]`) and also
/// deserializes from a plain `{path: [ops]}` map as used in config files.
/// Equality is set equality over (path, operations) entries.
#[derive(Debug, Clone, Default)]
pub struct CapabilitySet {
    entries: Vec<Capability>,
}

impl CapabilitySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_capabilities(
        caps: impl IntoIterator<Item = Capability>,
    ) -> Result<Self, CapabilityError> {
        let mut set = CapabilitySet::new();
        for cap in caps {
            set.insert(cap)?;
        }
        Ok(set)
    }

    /// Convenience constructor from `(path, ops)` string pairs.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a [Operation])>,
    ) -> Result<Self, CapabilityError> {
        Self::from_capabilities(
            pairs
                .into_iter()
                .map(|(p, ops)| Capability::new(normalize_path(p)?, ops.iter().copied()))
                .collect::<Result<Vec<_>, _>>()?,
        )
    }

    pub fn insert(&mut self, cap: Capability) -> Result<(), CapabilityError> {
        if self.entries.iter().any(|c| c.path == cap.path) {
            return Err(CapabilityError::DuplicatePath(cap.path.0));
        }
        self.entries.push(cap);
        Ok(())
    }

    /// Adds `cap`, unioning operations if the path is already present.
    pub fn merge(&mut self, cap: Capability) {
        match self.entries.iter_mut().find(|c| c.path == cap.path) {
            Some(existing) => existing.operations.extend(cap.operations),
            None => self.entries.push(cap),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Capability> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn grants(&self, path: &ResourcePath, op: Operation) -> bool {
        grants(self, path, op)
    }

    /// True if every grant of `self` is also a grant of `other`.
    pub fn is_subset_of(&self, other: &CapabilitySet) -> bool {
        // A subtree is covered exactly when its root is covered.
        self.entries
            .iter()
            .all(|c| c.operations.iter().all(|op| other.grants(&c.path, *op)))
    }

    /// Same grant relation, regardless of how it is written down.
    pub fn equivalent(&self, other: &CapabilitySet) -> bool {
        self.is_subset_of(other) && other.is_subset_of(self)
    }

    pub fn union(sets: impl IntoIterator<Item = CapabilitySet>) -> CapabilitySet {
        let mut out = CapabilitySet::new();
        for set in sets {
            for cap in set.entries {
                out.merge(cap);
            }
        }
        out
    }

    fn as_sorted(&self) -> BTreeMap<&ResourcePath, &BTreeSet<Operation>> {
        self.entries
            .iter()
            .map(|c| (&c.path, &c.operations))
            .collect()
    }
}

impl PartialEq for CapabilitySet {
    fn eq(&self, other: &Self) -> bool {
        self.as_sorted() == other.as_sorted()
    }
}

impl Eq for CapabilitySet {}

impl Serialize for CapabilitySet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(self.entries.len()))?;
        for cap in &self.entries {
            let entry = BTreeMap::from([(cap.path.as_str(), &cap.operations)]);
            seq.serialize_element(&entry)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for CapabilitySet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Layout {
            List(Vec<BTreeMap<String, Vec<Operation>>>),
            Map(BTreeMap<String, Vec<Operation>>),
        }
        let pairs: Vec<(String, Vec<Operation>)> = match Layout::deserialize(d)? {
            Layout::List(entries) => {
                let mut pairs = Vec::with_capacity(entries.len());
                for entry in entries {
                    if entry.len() != 1 {
                        return Err(D::Error::custom(CapabilityError::MalformedEntry));
                    }
                    pairs.extend(entry);
                }
                pairs
            }
            Layout::Map(map) => map.into_iter().collect(),
        };
        let mut set = CapabilitySet::new();
        for (path, ops) in pairs {
            let path = normalize_path(&path).map_err(D::Error::custom)?;
            let cap = Capability::new(path, ops).map_err(D::Error::custom)?;
            set.insert(cap).map_err(D::Error::custom)?;
        }
        Ok(set)
    }
}

/// True iff some capability covers `path` (segment prefix or equal) and lists `op`.
pub fn grants(caps: &CapabilitySet, path: &ResourcePath, op: Operation) -> bool {
    caps.entries.iter().any(|c| c.allows(path, op))
}

/// Intersection of two grant relations: the result grants `(p, o)` exactly
/// when both `caps` and `requested` do.
pub fn attenuate(caps: &CapabilitySet, requested: &CapabilitySet) -> CapabilitySet {
    let mut out = CapabilitySet::new();
    for held in &caps.entries {
        for want in &requested.entries {
            // Both cover p only if one is an ancestor of the other; the deeper one bounds the overlap.
            let deeper = if held.path.is_prefix_of(&want.path) {
                &want.path
            } else if want.path.is_prefix_of(&held.path) {
                &held.path
            } else {
                continue;
            };
            let ops: BTreeSet<_> = held
                .operations
                .intersection(&want.operations)
                .copied()
                .collect();
            if !ops.is_empty() {
                out.merge(Capability {
                    path: deeper.clone(),
                    operations: ops,
                });
            }
        }
    }
    out
}

/// The two-authority capability set from the prototype deployment.
pub fn sample_capabilities() -> CapabilitySet {
    CapabilitySet::from_pairs([
        ("/data/drone1", &[Operation::Read, Operation::Write][..]),
        ("/data/drone2", &[Operation::Read][..]),
    ])
    .expect("static capability set is valid")
}
