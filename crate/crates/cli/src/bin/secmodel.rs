//! Bounded model checking of the access-control rules, and audit-log replay.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;

use capvc::authsvc::AuthoritySnapshot;
use capvc::ressvc::{ResourceFileConfig, RevocationMode};
use capvc::secmodel::{check, replay_audit, Bounds, Mutation, ReplaySnapshot, Rules};
use capvc_cli::{emit, finish, Failure, EXIT_DENIED};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(
    version,
    about = "Check the security model or replay an audit log against it"
)]
struct Cli {
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate every universe within the bounds and test the assertions.
    Check {
        /// Scopes as tokens,authorities,servers,revocation-servers.
        #[arg(long, default_value = "3,2,2,1")]
        bounds: Bounds,
        /// Drop one rule from the model; repeatable.
        #[arg(long = "mutate")]
        mutations: Vec<Mutation>,
    },
    /// Check every grant and capability denial in an audit log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Assemble a replay snapshot from a resource-server config and the
    /// admin endpoints of the authorities it names.
    Snapshot {
        #[arg(long)]
        resource_config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_DENIED),
        Err(failure) => finish(Err(failure), true),
    }
}

fn report(out: Option<&std::path::Path>, value: &serde_json::Value) -> Result<(), Failure> {
    emit(
        out,
        &serde_json::to_string_pretty(value).expect("report serializes"),
    )
}

/// `Ok(false)` means the report lists violations or nonconformances.
fn run(cli: Cli) -> Result<bool, Failure> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::Check { bounds, mutations } => {
            let rules = mutations
                .iter()
                .fold(Rules::default(), |rules, m| m.apply(rules));
            let result = check(&bounds, rules).map_err(Failure::error)?;
            let mut value = serde_json::to_value(&result).expect("report serializes");
            value["mutations"] = json!(mutations.iter().map(|m| m.as_str()).collect::<Vec<_>>());
            value["holds"] = json!(result.holds());
            report(out, &value)?;
            Ok(result.holds())
        }
        Command::Replay { log, snapshot } => {
            let log = std::fs::read_to_string(&log)
                .map_err(|err| Failure::error(format!("cannot read {}: {err}", log.display())))?;
            let text = std::fs::read_to_string(&snapshot).map_err(|err| {
                Failure::error(format!("cannot read {}: {err}", snapshot.display()))
            })?;
            let snapshot: ReplaySnapshot = serde_json::from_str(&text).map_err(Failure::error)?;
            let result = replay_audit(&log, &snapshot).map_err(Failure::error)?;
            let mut value = serde_json::to_value(&result).expect("report serializes");
            value["conforms"] = json!(result.conforms());
            report(out, &value)?;
            Ok(result.conforms())
        }
        Command::Snapshot { resource_config } => {
            let config = ResourceFileConfig::load(&resource_config).map_err(Failure::error)?;
            let resource_table: BTreeMap<_, _> = config
                .resource_table
                .iter()
                .map(|(p, a)| (p.clone(), a.url.clone()))
                .collect();
            let urls: BTreeSet<&String> = resource_table.values().collect();
            let runtime = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .map_err(Failure::error)?;
            let http = reqwest::Client::new();
            let mut authorities = Vec::new();
            for url in urls {
                authorities.push(runtime.block_on(fetch_snapshot(&http, url))?);
            }
            // Audit timestamps are whole seconds: a grant and a later revocation may share one.
            let revocation_grace_secs = match config.revocation_mode {
                RevocationMode::Introspection => 1,
                RevocationMode::StatusList => config.cache_max_age_secs,
            };
            let snapshot = ReplaySnapshot {
                resource_table,
                authorities,
                revocation_grace_secs,
            };
            report(
                out,
                &serde_json::to_value(&snapshot).expect("snapshot serializes"),
            )?;
            Ok(true)
        }
    }
}

async fn fetch_snapshot(http: &reqwest::Client, url: &str) -> Result<AuthoritySnapshot, Failure> {
    http.get(format!("{url}/admin/snapshot"))
        .send()
        .await
        .and_then(|r| r.error_for_status())
        .map_err(|err| Failure::error(format!("{url}: {err}")))?
        .json::<AuthoritySnapshot>()
        .await
        .map_err(|err| Failure::error(format!("{url}: {err}")))
}
