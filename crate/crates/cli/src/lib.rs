//! Shared plumbing for the command-line binaries: exit codes, output and
//! logging.

use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use capvc::client::ClientError;
use serde_json::{json, Value};

pub const EXIT_OK: u8 = 0;
/// Transport, parse or I/O failure.
pub const EXIT_ERROR: u8 = 1;
/// The server (or the checker) said no.
pub const EXIT_DENIED: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
    pub detail: Option<Value>,
}

impl Failure {
    pub fn error(message: impl fmt::Display) -> Self {
        Failure {
            code: EXIT_ERROR,
            message: message.to_string(),
            detail: None,
        }
    }

    pub fn denied(message: impl fmt::Display, detail: Value) -> Self {
        Failure {
            code: EXIT_DENIED,
            message: message.to_string(),
            detail: Some(detail),
        }
    }

    fn to_json(&self) -> Value {
        let mut out = json!({ "ok": false, "exit_code": self.code, "message": self.message });
        if let Some(detail) = &self.detail {
            out["detail"] = detail.clone();
        }
        out
    }
}

impl From<ClientError> for Failure {
    fn from(err: ClientError) -> Self {
        let detail = match &err {
            ClientError::Denied {
                status,
                error,
                description,
            } => {
                Some(json!({ "status": status, "error": error, "error_description": description }))
            }
            _ => None,
        };
        Failure {
            code: err.exit_code() as u8,
            message: err.to_string(),
            detail,
        }
    }
}

/// Reports `result` on stdout (JSON) or stderr (text) and maps it to an exit code.
pub fn finish(result: Result<(), Failure>, json_output: bool) -> ExitCode {
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(failure) => {
            if json_output {
                println!("{}", failure.to_json());
            } else {
                eprintln!("error: {}", failure.message);
            }
            ExitCode::from(failure.code)
        }
    }
}

/// Writes `text` to `out` if given, else to stdout.
pub fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|err| Failure::error(format!("cannot write {}: {err}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map(|s| s.trim().to_string())
        .map_err(|err| Failure::error(format!("cannot read {}: {err}", path.display())))
}

/// Logs `info` and above to stderr.
pub fn init_logging() {
    tracing_subscriber::fmt()
        .with_max_level(tracing_subscriber::filter::LevelFilter::INFO)
        .with_writer(std::io::stderr)
        .init();
}
