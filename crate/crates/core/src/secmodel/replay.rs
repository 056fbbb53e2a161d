//! Replays resource-server audit logs against authority snapshots.
//!
//! A grant conforms when some credential it cites is a valid token of the
//! authority governing the path (issued, unexpired, unrevoked at the time),
//! held by the prover and granting the operation. This is recomputed from
//! the snapshots alone, independently of the server's own verdict.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authsvc::{AuthoritySnapshot, IssuedRecord};
use crate::capmodel::{attenuate, ResourcePath};
use crate::ressvc::{AuditCredential, AuditRecord, Decision, Stage};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("audit line {line}: {message}")]
pub struct ReplayError {
    pub line: usize,
    pub message: String,
}

/// The state the log is judged against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplaySnapshot {
    /// Resource prefix to the URL of its governing authority.
    pub resource_table: BTreeMap<ResourcePath, String>,
    pub authorities: Vec<AuthoritySnapshot>,
    /// How long after revocation a grant is still acceptable; the resource
    /// server's status-list max-age, or 1 (timestamp granularity) under
    /// introspection.
    #[serde(default)]
    pub revocation_grace_secs: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nonconformance {
    pub line: usize,
    pub ts: i64,
    pub path: String,
    pub decision: Decision,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub records: usize,
    pub grants_checked: usize,
    pub denials_checked: usize,
    pub nonconformances: Vec<Nonconformance>,
}

impl ConformanceReport {
    pub fn conforms(&self) -> bool {
        self.nonconformances.is_empty()
    }
}

struct Judge<'a> {
    snapshot: &'a ReplaySnapshot,
    issued: HashMap<&'a str, &'a BTreeMap<String, IssuedRecord>>,
}

impl Judge<'_> {
    fn governing(&self, path: &ResourcePath) -> Option<&str> {
        self.snapshot
            .resource_table
            .iter()
            .filter(|(prefix, _)| prefix.is_prefix_of(path))
            .max_by_key(|(prefix, _)| prefix.segments().count())
            .map(|(_, url)| url.as_str())
    }

    /// Why `cred` fails to justify the request, or `None` if it does.
    fn unjustified(
        &self,
        rec: &AuditRecord,
        path: &ResourcePath,
        cred: &AuditCredential,
    ) -> Option<String> {
        let op = rec.operation?;
        let governing = self.governing(path)?;
        if cred.iss != governing {
            return Some(format!("{} does not govern {path}", cred.iss));
        }
        let Some(issued) = self
            .issued
            .get(cred.iss.as_str())
            .and_then(|m| m.get(&cred.jti))
        else {
            return Some(format!("{} never issued {}", cred.iss, cred.jti));
        };
        if issued.index != cred.index || issued.subject.as_str() != cred.subject {
            return Some(format!("{} does not match the issued record", cred.jti));
        }
        if rec.ts >= issued.exp {
            return Some(format!("{} expired at {}", cred.jti, issued.exp));
        }
        if let Some(at) = issued.revoked_at {
            if rec.ts >= at + self.snapshot.revocation_grace_secs {
                return Some(format!("{} revoked at {at}", cred.jti));
            }
        }
        let holder = cred.holders.last().unwrap_or(&cred.subject);
        if rec.prover.as_deref() != Some(holder.as_str()) {
            return Some(format!("{} is not held by the prover", cred.jti));
        }
        if cred.masks.len() != cred.holders.len() {
            return Some("delegation chain is inconsistent".into());
        }
        let caps = cred
            .masks
            .iter()
            .fold(issued.capabilities.clone(), |caps, m| attenuate(&caps, m));
        if !caps.grants(path, op) {
            return Some(format!("{} does not grant {op} on {path}", cred.jti));
        }
        None
    }

    fn justified(&self, rec: &AuditRecord, path: &ResourcePath) -> Result<(), String> {
        let mut reasons = Vec::new();
        for cred in &rec.credentials {
            match self.unjustified(rec, path, cred) {
                None => return Ok(()),
                Some(reason) => reasons.push(reason),
            }
        }
        if reasons.is_empty() {
            reasons.push("no credential cited".into());
        }
        Err(reasons.join("; "))
    }
}

/// Checks every grant in `log` (JSON lines) for a justifying credential and
/// every capability denial for the absence of one.
pub fn replay_audit(
    log: &str,
    snapshot: &ReplaySnapshot,
) -> Result<ConformanceReport, ReplayError> {
    let judge = Judge {
        snapshot,
        issued: snapshot
            .authorities
            .iter()
            .map(|a| (a.url.as_str(), &a.issued))
            .collect(),
    };
    let mut report = ConformanceReport::default();
    for (i, line) in log.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AuditRecord = serde_json::from_str(line).map_err(|err| ReplayError {
            line: line_no,
            message: err.to_string(),
        })?;
        report.records += 1;
        // Storage denials passed every check before the store answered.
        let authorized = rec.decision == Decision::Grant || rec.stage == Some(Stage::Storage);
        let capability_denial = rec.stage == Some(Stage::Capability);
        if !authorized && !capability_denial {
            continue;
        }
        let path = ResourcePath::parse(&rec.path).map_err(|err| ReplayError {
            line: line_no,
            message: err.to_string(),
        })?;
        let verdict = judge.justified(&rec, &path);
        let mut flag = |reason: String| {
            report.nonconformances.push(Nonconformance {
                line: line_no,
                ts: rec.ts,
                path: rec.path.clone(),
                decision: rec.decision,
                reason,
            })
        };
        if authorized {
            report.grants_checked += 1;
            if let Err(reason) = verdict {
                flag(reason);
            }
        } else {
            report.denials_checked += 1;
            if verdict.is_ok() {
                flag("denied although a cited credential grants the request".into());
            }
        }
    }
    Ok(report)
}
