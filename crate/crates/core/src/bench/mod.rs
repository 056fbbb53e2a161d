//! Signing-algorithm benchmark: token generation time, verification time and
//! request throughput per algorithm and load.
//!
//! A load of `n` means `n` operations per trial: `n` tokens issued, the same
//! `n` tokens verified, then `n` resource requests served. The algorithm is
//! the authority's token-signing algorithm; client DPoP keys are Ed25519 in
//! every cell, so only the token signature varies between rows.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::authsvc::{self, Authority, AuthorityConfig};
use crate::capmodel::{
    sample_capabilities, AccessTable, AuthorityDescriptor, CapabilitySet, Operation, ResourcePath,
    ResourceTable, Thumbprint,
};
use crate::dpop;
use crate::jose::{KeyPair, SignatureAlgorithm};
use crate::ressvc::{
    self, AuditLog, AuthorityClient, HttpAuthorityClient, LocalAuthorityClient, MemoryStore,
    ObjectStore, ResourceRequest, ResourceServer, ResourceServerConfig, RevocationMode,
};

const OBJECT_PATH: &str = "/data/drone1/telemetry";
const OBJECT_BYTES: usize = 1024;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error("bench run failed: {0}")]
    Failed(String),
}

fn failed(err: impl std::fmt::Display) -> BenchError {
    BenchError::Failed(err.to_string())
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub algorithms: Vec<SignatureAlgorithm>,
    /// Operations per trial, strictly increasing.
    pub loads: Vec<usize>,
    pub warmup: usize,
    pub repetitions: usize,
    pub capabilities: CapabilitySet,
    /// Concurrent request workers in the throughput phase.
    pub workers: usize,
    /// Serve throughput requests over loopback HTTP bound to this address
    /// instead of calling the resource server in-process.
    pub over_http: Option<SocketAddr>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            algorithms: SignatureAlgorithm::ALL.to_vec(),
            loads: (1..=10).map(|i| i * 100).collect(),
            warmup: 20,
            repetitions: 3,
            capabilities: sample_capabilities(),
            workers: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            over_http: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let invalid = |msg: &str| Err(BenchError::InvalidConfig(msg.into()));
        if self.algorithms.is_empty() {
            return invalid("no algorithms");
        }
        if self.loads.is_empty() || self.loads[0] == 0 {
            return invalid("loads must be non-empty and positive");
        }
        if self.loads.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("loads must be strictly increasing");
        }
        if self.repetitions < 3 {
            return invalid("repetitions must be at least 3");
        }
        if self.workers == 0 {
            return invalid("workers must be at least 1");
        }
        if !self.capabilities.grants(
            &ResourcePath::parse(OBJECT_PATH).expect("static"),
            Operation::Read,
        ) {
            return invalid(&format!("capabilities must grant read on {OBJECT_PATH}"));
        }
        Ok(())
    }

    fn issued_per_algorithm(&self) -> usize {
        self.warmup + 1 + self.loads.iter().sum::<usize>() * self.repetitions
    }
}

pub const CSV_PREAMBLE: &str =
    "# load = total requests per trial; gen_ms and verify_ms are per-token means; \
stddev = sample stddev of gen_ms over repetitions\n";

/// One CSV row: means over repetitions, and their sample standard deviations.
/// `stddev` belongs to `gen_ms`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub algorithm: String,
    pub load: usize,
    pub gen_ms: f64,
    pub verify_ms: f64,
    pub throughput_rps: f64,
    pub stddev: f64,
    pub verify_stddev_ms: f64,
    pub throughput_stddev_rps: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub elapsed: Duration,
}

impl BenchResult {
    pub fn cell(&self, alg: SignatureAlgorithm, load: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == alg.as_str() && r.load == load)
    }

    pub fn loads(&self) -> Vec<usize> {
        let mut loads: Vec<usize> = self.rows.iter().map(|r| r.load).collect();
        loads.sort_unstable();
        loads.dedup();
        loads
    }

    /// CSV preceded by one `#` comment line stating the units.
    pub fn to_csv(&self) -> String {
        let mut out = csv::Writer::from_writer(CSV_PREAMBLE.as_bytes().to_vec());
        for row in &self.rows {
            out.serialize(row).expect("in-memory csv");
        }
        String::from_utf8(out.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two samples.
pub fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

enum Backend {
    InProcess(Arc<ResourceServer>),
    Http(reqwest::Client),
}

struct Cell {
    authority: Arc<Authority>,
    descriptor: AuthorityDescriptor,
    holder: KeyPair,
    backend: Backend,
    origin: String,
}

impl Cell {
    async fn build(alg: SignatureAlgorithm, cfg: &BenchConfig) -> Result<Self, BenchError> {
        let holder =
            KeyPair::generate(SignatureAlgorithm::EdDsa, Some(b"bench-client")).map_err(failed)?;
        let key = KeyPair::generate(alg, Some(format!("bench-authority-{alg}").as_bytes()))
            .map_err(failed)?;
        let mut table = AccessTable::new();
        table.grant(Thumbprint::of(holder.public()), cfg.capabilities.clone());

        let (auth_listener, res_listener, auth_url, origin) = match cfg.over_http {
            Some(addr) => {
                let auth = tokio::net::TcpListener::bind(addr).await.map_err(failed)?;
                let res = tokio::net::TcpListener::bind(addr).await.map_err(failed)?;
                let auth_url = format!("http://{}", auth.local_addr().map_err(failed)?);
                let origin = format!("http://{}", res.local_addr().map_err(failed)?);
                (Some(auth), Some(res), auth_url, origin)
            }
            None => (
                None,
                None,
                "https://bench-authority.example".into(),
                "https://bench-storage.example".into(),
            ),
        };

        let mut auth_config = AuthorityConfig::new(auth_url.clone(), table);
        auth_config.status_list_capacity = cfg.issued_per_algorithm();
        let authority = Arc::new(Authority::new(auth_config, key).map_err(failed)?);
        let descriptor = AuthorityDescriptor {
            url: auth_url,
            jwk: authority.public_key().clone(),
        };
        let mut resources = ResourceTable::new();
        resources.insert(
            ResourcePath::parse("/data").expect("static"),
            descriptor.clone(),
        );
        let mut res_config = ResourceServerConfig::new(resources);
        res_config.revocation_mode = RevocationMode::StatusList;
        res_config.cache_max_age_secs = i64::MAX;
        res_config.public_url = Some(origin.clone());

        let store = Arc::new(MemoryStore::new());
        store
            .put(
                &ResourcePath::parse(OBJECT_PATH).expect("static"),
                &[7u8; OBJECT_BYTES],
            )
            .map_err(failed)?;
        let client: Arc<dyn AuthorityClient> = match cfg.over_http {
            Some(_) => Arc::new(HttpAuthorityClient::new()),
            None => Arc::new(LocalAuthorityClient::new([authority.clone()])),
        };
        let server = Arc::new(ResourceServer::new(
            res_config,
            store,
            client,
            AuditLog::disabled(),
        ));

        let backend = match (auth_listener, res_listener) {
            (Some(auth), Some(res)) => {
                tokio::spawn(authsvc::http::serve(authority.clone(), auth));
                tokio::spawn(ressvc::http::serve(server, res));
                Backend::Http(reqwest::Client::new())
            }
            _ => Backend::InProcess(server),
        };
        Ok(Cell {
            authority,
            descriptor,
            holder,
            backend,
            origin,
        })
    }

    fn object_uri(&self) -> String {
        format!("{}{OBJECT_PATH}", self.origin)
    }

    fn generate(&self, caps: &CapabilitySet, n: usize) -> Result<(f64, Vec<String>), BenchError> {
        let now = crate::unix_now();
        let mut tokens = Vec::with_capacity(n);
        let start = Instant::now();
        for _ in 0..n {
            tokens.push(
                self.authority
                    .issue_access_token(self.holder.public(), caps, now)
                    .map_err(failed)?,
            );
        }
        Ok((ms_per_op(start.elapsed(), n), tokens))
    }

    fn verify(&self, tokens: &[String]) -> Result<f64, BenchError> {
        let now = crate::unix_now();
        let path = ResourcePath::parse(OBJECT_PATH).expect("static");
        let start = Instant::now();
        for token in tokens {
            let claims =
                ressvc::verify_access_token(token, &self.descriptor, self.holder.public(), now)
                    .map_err(|d| failed(d.description))?;
            if !claims.capabilities().grants(&path, Operation::Read) {
                return Err(failed("issued token does not grant the benchmark path"));
            }
        }
        Ok(ms_per_op(start.elapsed(), tokens.len()))
    }

    async fn throughput(&self, token: &str, n: usize, workers: usize) -> Result<f64, BenchError> {
        let uri = self.object_uri();
        let now = crate::unix_now();
        let proofs: Vec<String> = (0..n)
            .map(|_| dpop::create_proof(&self.holder, "GET", &uri, now))
            .collect::<Result<_, _>>()
            .map_err(failed)?;
        let chunk = n.div_ceil(workers);
        let start = Instant::now();
        let mut tasks = Vec::new();
        for batch in proofs.chunks(chunk) {
            let batch = batch.to_vec();
            let token = token.to_string();
            let uri = uri.clone();
            let task: tokio::task::JoinHandle<Result<(), String>> = match &self.backend {
                Backend::InProcess(server) => {
                    let server = server.clone();
                    tokio::spawn(async move {
                        for proof in batch {
                            let req =
                                ResourceRequest::new("GET", &uri).with_credentials(&token, &proof);
                            let resp = server.handle_resource_request(&req, now).await;
                            if resp.status != 200 {
                                return Err(format!("request denied: {:?}", resp.denial));
                            }
                        }
                        Ok(())
                    })
                }
                Backend::Http(client) => {
                    let client = client.clone();
                    tokio::spawn(async move {
                        for proof in batch {
                            let resp = client
                                .get(&uri)
                                .header("Authorization", format!("DPoP {token}"))
                                .header("DPoP", proof)
                                .send()
                                .await
                                .map_err(|e| e.to_string())?;
                            let status = resp.status();
                            resp.bytes().await.map_err(|e| e.to_string())?;
                            if status != 200 {
                                return Err(format!("request denied with {status}"));
                            }
                        }
                        Ok(())
                    })
                }
            };
            tasks.push(task);
        }
        for task in tasks {
            task.await.map_err(failed)?.map_err(BenchError::Failed)?;
        }
        Ok(n as f64 / start.elapsed().as_secs_f64())
    }
}

fn ms_per_op(elapsed: Duration, n: usize) -> f64 {
    elapsed.as_secs_f64() * 1e3 / n as f64
}

/// Runs the full grid, calling `on_row` as each cell completes.
pub fn run_bench_with(
    cfg: &BenchConfig,
    mut on_row: impl FnMut(&BenchRow),
) -> Result<BenchResult, BenchError> {
    cfg.validate()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(cfg.workers)
        .enable_all()
        .build()
        .map_err(failed)?;
    let started = Instant::now();
    let mut cells = Vec::with_capacity(cfg.algorithms.len());
    for &alg in &cfg.algorithms {
        let cell = runtime.block_on(Cell::build(alg, cfg))?;
        let (_, warm) = cell.generate(&cfg.capabilities, cfg.warmup.max(1))?;
        cell.verify(&warm)?;
        runtime.block_on(cell.throughput(&warm[0], cfg.warmup.max(1), cfg.workers))?;
        cells.push((alg, cell));
    }
    // Algorithms alternate within each repetition so drift in machine speed
    // lands on every algorithm alike.
    let mut result = BenchResult::default();
    for &load in &cfg.loads {
        let mut samples = vec![(Vec::new(), Vec::new(), Vec::new()); cells.len()];
        for _ in 0..cfg.repetitions {
            for ((_, cell), (gen, ver, tput)) in cells.iter().zip(&mut samples) {
                let (gen_ms, tokens) = cell.generate(&cfg.capabilities, load)?;
                gen.push(gen_ms);
                ver.push(cell.verify(&tokens)?);
                tput.push(runtime.block_on(cell.throughput(&tokens[0], load, cfg.workers))?);
            }
        }
        for ((alg, _), (gen, ver, tput)) in cells.iter().zip(&samples) {
            let row = BenchRow {
                algorithm: alg.as_str().to_string(),
                load,
                gen_ms: mean(gen),
                verify_ms: mean(ver),
                throughput_rps: mean(tput),
                stddev: stddev(gen),
                verify_stddev_ms: stddev(ver),
                throughput_stddev_rps: stddev(tput),
            };
            on_row(&row);
            result.rows.push(row);
        }
    }
    result.elapsed = started.elapsed();
    Ok(result)
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchResult, BenchError> {
    run_bench_with(cfg, |_| {})
}

/// Relative slack allowed on `PS256 ≤ RS256` generation time, which the two
/// RSA schemes sit close enough to cross under scheduler noise.
pub const RSA_TIE_TOLERANCE: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub name: String,
    pub load: usize,
    pub passed: bool,
    pub detail: String,
}

/// Evaluates the expected algorithm orderings at every load present for
/// all four algorithms.
pub fn check_orderings(result: &BenchResult) -> Vec<OrderingCheck> {
    use SignatureAlgorithm::*;
    let mut checks = Vec::new();
    for load in result.loads() {
        let cells: Option<Vec<&BenchRow>> = SignatureAlgorithm::ALL
            .iter()
            .map(|a| result.cell(*a, load))
            .collect();
        let Some(cells) = cells else { continue };
        let by = |alg: SignatureAlgorithm| {
            cells[SignatureAlgorithm::ALL
                .iter()
                .position(|a| *a == alg)
                .expect("listed")]
        };
        let (ed, rs, ps, es) = (by(EdDsa), by(Rs256), by(Ps256), by(Es512));
        let mut push = |name: &str, passed: bool, detail: String| {
            checks.push(OrderingCheck {
                name: name.into(),
                load,
                passed,
                detail,
            });
        };
        push(
            "generation EdDSA < PS256",
            ed.gen_ms < ps.gen_ms,
            format!("{:.3} < {:.3} ms", ed.gen_ms, ps.gen_ms),
        );
        push(
            "generation PS256 <= RS256",
            ps.gen_ms <= rs.gen_ms * (1.0 + RSA_TIE_TOLERANCE),
            format!(
                "{:.3} <= {:.3} ms (+{:.0}%)",
                ps.gen_ms,
                rs.gen_ms,
                RSA_TIE_TOLERANCE * 100.0
            ),
        );
        push(
            "generation RS256 < ES512",
            rs.gen_ms < es.gen_ms,
            format!("{:.3} < {:.3} ms", rs.gen_ms, es.gen_ms),
        );
        let others = [rs, ps, es];
        push(
            "verification EdDSA fastest",
            others.iter().all(|o| ed.verify_ms < o.verify_ms),
            format!("EdDSA {:.3} ms", ed.verify_ms),
        );
        push(
            "verification ES512 slowest",
            [ed, rs, ps].iter().all(|o| es.verify_ms > o.verify_ms),
            format!("ES512 {:.3} ms", es.verify_ms),
        );
        push(
            "throughput EdDSA highest",
            others.iter().all(|o| ed.throughput_rps > o.throughput_rps),
            format!("EdDSA {:.0} rps", ed.throughput_rps),
        );
        push(
            "throughput ES512 lowest",
            [ed, rs, ps]
                .iter()
                .all(|o| es.throughput_rps < o.throughput_rps),
            format!("ES512 {:.0} rps", es.throughput_rps),
        );
    }
    checks
}
