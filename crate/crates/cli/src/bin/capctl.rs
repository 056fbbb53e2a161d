//! Operator and client tool: keys, tokens, presentations, delegation,
//! resource access, revocation and benchmarks.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use capvc::authsvc::peek_access_token;
use capvc::bench::{check_orderings, run_bench_with, BenchConfig};
use capvc::capmodel::CapabilitySet;
use capvc::client::{self, AccessOptions, DEFAULT_DELEGATION_LIFETIME_SECS};
use capvc::jose::{Jwk, KeyPair, SignatureAlgorithm};
use capvc_cli::{emit, finish, read_text, Failure};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(version, about = "Capability-token client and operator tool")]
struct Cli {
    /// Private key file (JWK) of the acting client.
    #[arg(long, global = true)]
    key: Option<PathBuf>,
    /// Write the primary output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TokenSource {
    /// Compact token (or presentation, or delegation).
    #[arg(long)]
    token: Option<String>,
    /// File holding the compact token.
    #[arg(long)]
    token_file: Option<PathBuf>,
}

impl TokenSource {
    fn read(&self) -> Result<String, Failure> {
        match (&self.token, &self.token_file) {
            (Some(token), _) => Ok(token.trim().to_string()),
            (None, Some(path)) => read_text(path),
            (None, None) => Err(Failure::error("no token given")),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a keypair and store it at --key.
    Keygen {
        #[arg(long, default_value = "EdDSA")]
        alg: SignatureAlgorithm,
        /// Overwrite an existing key file.
        #[arg(long)]
        force: bool,
    },
    /// Request an access token from an authorization server.
    Token {
        #[arg(long)]
        authority: String,
    },
    /// Read an object.
    Get {
        url: String,
        #[command(flatten)]
        token: TokenSource,
    },
    /// Write an object.
    Put {
        url: String,
        #[command(flatten)]
        token: TokenSource,
        /// Object contents.
        #[arg(long, conflicts_with = "file")]
        data: Option<String>,
        /// Read the object contents from this file.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Bundle tokens into one presentation signed by --key.
    Combine {
        /// Token files.
        #[arg(required = true)]
        tokens: Vec<PathBuf>,
    },
    /// Re-issue a token to another key under a narrower capability mask.
    Delegate {
        #[command(flatten)]
        token: TokenSource,
        /// Delegatee public JWK (or key file).
        #[arg(long)]
        to: PathBuf,
        /// Mask as JSON, e.g. '{"/data/drone1":["read"]}'.
        #[arg(long)]
        mask: String,
        #[arg(long, default_value_t = DEFAULT_DELEGATION_LIFETIME_SECS)]
        lifetime: i64,
    },
    /// Ask the issuing authority whether a token is active.
    Introspect {
        #[arg(long)]
        authority: String,
        #[command(flatten)]
        token: TokenSource,
    },
    /// Revoke a token at its authority (loopback admin endpoint).
    Revoke {
        #[arg(long)]
        authority: String,
        /// Revocation list index; read from the token when omitted.
        #[arg(long)]
        index: Option<u64>,
        #[arg(long)]
        token: Option<String>,
        #[arg(long)]
        token_file: Option<PathBuf>,
    },
    /// Measure token generation, verification and request throughput.
    Bench {
        #[arg(long)]
        csv: PathBuf,
        /// Comma-separated algorithms.
        #[arg(long, value_delimiter = ',', default_value = "EdDSA,RS256,PS256,ES512")]
        algs: Vec<SignatureAlgorithm>,
        /// Comma-separated loads (requests per trial).
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "100,200,300,400,500,600,700,800,900,1000"
        )]
        loads: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long)]
        workers: Option<usize>,
        /// Serve throughput requests over HTTP bound to this loopback address.
        #[arg(long)]
        over_http: Option<SocketAddr>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_output = cli.json;
    let result = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Failure::error)
        .and_then(|rt| rt.block_on(run(cli)));
    finish(result, json_output)
}

fn key_path(cli: &Cli) -> Result<&Path, Failure> {
    cli.key
        .as_deref()
        .ok_or_else(|| Failure::error("--key is required"))
}

fn load_key(cli: &Cli) -> Result<KeyPair, Failure> {
    KeyPair::load(key_path(cli)?).map_err(Failure::error)
}

/// Emits `primary` (text mode) or `summary` (JSON mode).
fn output(cli: &Cli, primary: &str, summary: Value) -> Result<(), Failure> {
    if cli.json {
        let mut summary = summary;
        summary["ok"] = json!(true);
        emit(cli.out.as_deref(), &summary.to_string())
    } else {
        emit(cli.out.as_deref(), primary)
    }
}

fn now() -> i64 {
    capvc::unix_now()
}

async fn run(cli: Cli) -> Result<(), Failure> {
    let http = reqwest::Client::new();
    match &cli.command {
        Command::Keygen { alg, force } => {
            let path = key_path(&cli)?;
            if path.exists() && !force {
                return Err(Failure::error(format!(
                    "{} exists; pass --force to replace it",
                    path.display()
                )));
            }
            let key = KeyPair::generate(*alg, None).map_err(Failure::error)?;
            key.save(path)
                .map_err(|err| Failure::error(format!("{}: {err}", path.display())))?;
            let jwk = serde_json::to_string(key.public()).expect("jwk serializes");
            output(
                &cli,
                &jwk,
                json!({ "thumbprint": key.thumbprint(), "jwk": key.public() }),
            )
        }
        Command::Token { authority } => {
            let key = load_key(&cli)?;
            let token = client::request_token(&http, authority, &key).await?;
            let claims = peek_access_token(&token);
            let summary = json!({
                "access_token": token,
                "jti": claims.as_ref().map(|c| c.jti.clone()),
                "revocation_list_index": claims.as_ref().map(|c| c.status().revocation_list_index),
                "exp": claims.as_ref().map(|c| c.exp),
            });
            output(&cli, &token, summary)
        }
        Command::Get { url, token } => {
            let key = load_key(&cli)?;
            access(&cli, &http, url, &token.read()?, &key, "GET", None).await
        }
        Command::Put {
            url,
            token,
            data,
            file,
        } => {
            let key = load_key(&cli)?;
            let body = match (data, file) {
                (Some(data), _) => data.clone().into_bytes(),
                (None, Some(path)) => std::fs::read(path)
                    .map_err(|err| Failure::error(format!("{}: {err}", path.display())))?,
                (None, None) => Vec::new(),
            };
            access(&cli, &http, url, &token.read()?, &key, "PUT", Some(body)).await
        }
        Command::Combine { tokens } => {
            let key = load_key(&cli)?;
            let tokens = tokens
                .iter()
                .map(|p| read_text(p))
                .collect::<Result<Vec<_>, _>>()?;
            let vp = client::combine_presentation(&tokens, &key, now())?;
            output(
                &cli,
                &vp,
                json!({ "presentation": vp, "tokens": tokens.len() }),
            )
        }
        Command::Delegate {
            token,
            to,
            mask,
            lifetime,
        } => {
            let key = load_key(&cli)?;
            let delegatee = read_public_key(to)?;
            let mask: CapabilitySet = serde_json::from_str(mask)
                .map_err(|err| Failure::error(format!("invalid mask: {err}")))?;
            let delegation =
                client::delegate(&token.read()?, &delegatee, &mask, &key, *lifetime, now())?;
            output(
                &cli,
                &delegation,
                json!({ "delegation": delegation, "to": delegatee.thumbprint() }),
            )
        }
        Command::Introspect { authority, token } => {
            let endpoint = format!("{}/introspect", authority.trim_end_matches('/'));
            let resp = http
                .post(&endpoint)
                .json(&json!({ "token": token.read()? }))
                .send()
                .await
                .and_then(|r| r.error_for_status())
                .map_err(Failure::error)?;
            let body: Value = resp.json().await.map_err(Failure::error)?;
            let active = body.get("active").and_then(Value::as_bool).unwrap_or(false);
            output(&cli, &active.to_string(), json!({ "active": active }))
        }
        Command::Revoke {
            authority,
            index,
            token,
            token_file,
        } => {
            let index = match (index, token, token_file) {
                (Some(index), _, _) => *index,
                (None, token, file) => {
                    let compact = match (token, file) {
                        (Some(t), _) => t.trim().to_string(),
                        (None, Some(p)) => read_text(p)?,
                        (None, None) => {
                            return Err(Failure::error("give --index, --token or --token-file"))
                        }
                    };
                    peek_access_token(&compact)
                        .ok_or_else(|| Failure::error("not an access token"))?
                        .status()
                        .revocation_list_index
                }
            };
            let endpoint = format!("{}/admin/revoke", authority.trim_end_matches('/'));
            let resp = http
                .post(&endpoint)
                .json(&json!({ "index": index }))
                .send()
                .await
                .map_err(Failure::error)?;
            let status = resp.status();
            let body = resp.text().await.map_err(Failure::error)?;
            if !status.is_success() {
                return Err(Failure::error(format!("revoke failed ({status}): {body}")));
            }
            output(
                &cli,
                &format!("revoked {index}"),
                json!({ "revoked": index }),
            )
        }
        Command::Bench {
            csv,
            algs,
            loads,
            repetitions,
            workers,
            over_http,
        } => {
            let mut cfg = BenchConfig {
                algorithms: algs.clone(),
                loads: loads.clone(),
                repetitions: *repetitions,
                over_http: *over_http,
                ..BenchConfig::default()
            };
            if let Some(workers) = workers {
                cfg.workers = *workers;
            }
            let result = tokio::task::spawn_blocking(move || {
                run_bench_with(&cfg, |row| {
                    eprintln!(
                        "{:>6} load {:>5}: gen {:.3} ms  verify {:.3} ms  {:.0} req/s",
                        row.algorithm, row.load, row.gen_ms, row.verify_ms, row.throughput_rps
                    )
                })
            })
            .await
            .map_err(Failure::error)?
            .map_err(Failure::error)?;
            std::fs::write(csv, result.to_csv())
                .map_err(|err| Failure::error(format!("{}: {err}", csv.display())))?;
            let checks = check_orderings(&result);
            let lines: Vec<String> = checks
                .iter()
                .map(|c| {
                    format!(
                        "{} load {}: {} ({})",
                        if c.passed { "ok  " } else { "FAIL" },
                        c.load,
                        c.name,
                        c.detail
                    )
                })
                .collect();
            let summary = json!({
                "csv": csv,
                "elapsed_secs": result.elapsed.as_secs_f64(),
                "orderings": checks.iter().map(|c| json!({
                    "name": c.name, "load": c.load, "passed": c.passed, "detail": c.detail,
                })).collect::<Vec<_>>(),
            });
            output(&cli, &lines.join("\n"), summary)
        }
    }
}

async fn access(
    cli: &Cli,
    http: &reqwest::Client,
    url: &str,
    token: &str,
    key: &KeyPair,
    method: &str,
    body: Option<Vec<u8>>,
) -> Result<(), Failure> {
    let outcome = client::access_resource(
        http,
        url,
        token,
        key,
        method,
        body,
        &AccessOptions::default(),
    )
    .await?;
    if let Some(err) = client::outcome_error(&outcome) {
        return Err(err.into());
    }
    if cli.json {
        let body = String::from_utf8_lossy(&outcome.body);
        output(cli, "", json!({ "status": outcome.status, "body": body }))
    } else {
        match cli.out.as_deref() {
            Some(path) => std::fs::write(path, &outcome.body)
                .map_err(|err| Failure::error(format!("{}: {err}", path.display()))),
            None => {
                use std::io::Write;
                let mut stdout = std::io::stdout();
                stdout
                    .write_all(&outcome.body)
                    .and_then(|_| stdout.flush())
                    .map_err(Failure::error)
            }
        }
    }
}

/// A public JWK file, or a private key file whose public half is used.
fn read_public_key(path: &Path) -> Result<Jwk, Failure> {
    if let Ok(key) = KeyPair::load(path) {
        return Ok(key.public().clone());
    }
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|err| Failure::error(format!("{}: {err}", path.display())))
}
