//! One JSON line per handled request.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::Stage;
use crate::capmodel::{CapabilitySet, Operation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Grant,
    Deny,
}

/// A credential the pipeline verified for this request.
///
/// `subject` is the root token's holder; `holders[i]` received the
/// credential under `masks[i]` by delegation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCredential {
    pub jti: String,
    pub iss: String,
    pub index: u64,
    pub subject: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub holders: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<CapabilitySet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub ts: i64,
    pub method: String,
    pub path: String,
    pub operation: Option<Operation>,
    pub prover: Option<String>,
    pub decision: Decision,
    pub stage: Option<Stage>,
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub credentials: Vec<AuditCredential>,
}

enum Sink {
    Disabled,
    Memory(Vec<AuditRecord>),
    File(BufWriter<File>),
}

pub struct AuditLog {
    sink: Mutex<Sink>,
}

impl AuditLog {
    pub fn disabled() -> Self {
        AuditLog {
            sink: Mutex::new(Sink::Disabled),
        }
    }

    pub fn memory() -> Self {
        AuditLog {
            sink: Mutex::new(Sink::Memory(Vec::new())),
        }
    }

    /// Appends to `path`, creating it if needed.
    pub fn append_to(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog {
            sink: Mutex::new(Sink::File(BufWriter::new(file))),
        })
    }

    pub fn record(&self, record: AuditRecord) {
        let mut sink = self.sink.lock().expect("audit log poisoned");
        match &mut *sink {
            Sink::Disabled => {}
            Sink::Memory(records) => records.push(record),
            Sink::File(out) => {
                let line = serde_json::to_string(&record).expect("audit record serializes");
                if let Err(err) = writeln!(out, "{line}").and_then(|_| out.flush()) {
                    tracing::error!("audit write failed: {err}");
                }
            }
        }
    }

    /// Records held in memory; empty for other sinks.
    pub fn records(&self) -> Vec<AuditRecord> {
        match &*self.sink.lock().expect("audit log poisoned") {
            Sink::Memory(records) => records.clone(),
            _ => Vec::new(),
        }
    }
}

pub fn to_lines(records: &[AuditRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("audit record serializes") + "\n")
        .collect()
}
