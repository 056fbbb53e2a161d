//! Resource server: a multi-tenant object store that checks every request
//! against the authority governing the requested path.
//!
//! Stages run in the order of [`Stage`]; a denial names the first stage
//! that failed and storage is touched only after every check passed.

mod audit;
mod config;
pub mod http;
mod revocation;
mod store;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::authsvc::{AccessTokenClaims, ACCESS_TOKEN_TYP};
use crate::capmodel::{
    attenuate, normalize_path, AuthorityDescriptor, CapabilitySet, Operation, ResourcePath,
    ResourceTable,
};
use crate::client::{
    DelegationClaims, PresentationClaims, DELEGATION_TYP, MAX_DELEGATION_DEPTH, PRESENTATION_TYP,
};
use crate::dpop::{self, FreshnessWindow, ReplayCache};
use crate::jose::{self, JsonMap, Jwk, SignedEnvelope};

pub use audit::{to_lines, AuditCredential, AuditLog, AuditRecord, Decision};
pub use config::{ResourceConfigError, ResourceFileConfig};
pub use revocation::{
    AuthorityClient, FetchError, HttpAuthorityClient, LocalAuthorityClient, RevocationChecker,
    RevocationMode, DEFAULT_CACHE_MAX_AGE_SECS,
};
pub use store::{FsStore, MemoryStore, ObjectStore, StoreError};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Path,
    Authority,
    Dpop,
    TokenDecode,
    Issuer,
    Signature,
    KeyBinding,
    Expiry,
    Revocation,
    Capability,
    Storage,
}

impl Stage {
    pub const ORDER: [Stage; 11] = [
        Stage::Path,
        Stage::Authority,
        Stage::Dpop,
        Stage::TokenDecode,
        Stage::Issuer,
        Stage::Signature,
        Stage::KeyBinding,
        Stage::Expiry,
        Stage::Revocation,
        Stage::Capability,
        Stage::Storage,
    ];

    fn status(self) -> (u16, &'static str) {
        match self {
            Stage::Path => (400, "invalid_path"),
            Stage::Authority => (404, "unmanaged_path"),
            Stage::Dpop => (401, "invalid_dpop"),
            Stage::TokenDecode | Stage::Issuer | Stage::Signature | Stage::KeyBinding => {
                (401, "invalid_token")
            }
            Stage::Expiry => (401, "expired_token"),
            Stage::Revocation => (401, "revoked_token"),
            Stage::Capability => (403, "insufficient_capabilities"),
            Stage::Storage => (500, "storage_error"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Denial {
    pub stage: Stage,
    pub status: u16,
    pub error: &'static str,
    pub description: String,
}

impl Denial {
    pub fn at(stage: Stage, description: impl Into<String>) -> Self {
        let (status, error) = stage.status();
        Denial {
            stage,
            status,
            error,
            description: description.into(),
        }
    }

    pub fn body(&self) -> Value {
        json!({
            "error": self.error,
            "error_description": self.description,
            "stage": self.stage,
        })
    }
}

pub type Verdict<T> = Result<T, Denial>;

/// HTTP verb to capability operation. `None` for unsupported verbs.
pub fn operation_for(method: &str) -> Option<Operation> {
    match method {
        "GET" => Some(Operation::Read),
        "PUT" | "POST" | "DELETE" => Some(Operation::Write),
        _ => None,
    }
}

/// Verifies a root access token from `issuer` held by `holder`: issuer,
/// signature, key binding and expiry. Revocation is checked separately.
pub fn verify_access_token(
    compact: &str,
    issuer: &AuthorityDescriptor,
    holder: &Jwk,
    now: i64,
) -> Verdict<AccessTokenClaims> {
    let unverified = decode(compact)?;
    if unverified.header.get("typ").and_then(Value::as_str) != Some(ACCESS_TOKEN_TYP) {
        return Err(Denial::at(Stage::TokenDecode, "not an access token"));
    }
    match unverified.claims.get("iss").and_then(Value::as_str) {
        Some(iss) if iss == issuer.url => {}
        _ => {
            return Err(Denial::at(
                Stage::Issuer,
                "iss does not match the governing authority",
            ))
        }
    }
    let (_, claims) = jose::verify_envelope(compact, &issuer.jwk)
        .map_err(|err| Denial::at(Stage::Signature, err.to_string()))?;
    let claims: AccessTokenClaims = parse_claims(claims)?;
    if claims.cnf.jwk != *holder {
        return Err(Denial::at(
            Stage::KeyBinding,
            "cnf key differs from the DPoP key",
        ));
    }
    if !claims.is_well_formed() || now >= claims.exp {
        return Err(Denial::at(Stage::Expiry, "token expired"));
    }
    Ok(claims)
}

fn decode(compact: &str) -> Verdict<SignedEnvelope> {
    SignedEnvelope::decode_unverified(compact)
        .map_err(|err| Denial::at(Stage::TokenDecode, err.to_string()))
}

fn parse_claims<T: serde::de::DeserializeOwned>(claims: JsonMap) -> Verdict<T> {
    serde_json::from_value(Value::Object(claims))
        .map_err(|err| Denial::at(Stage::TokenDecode, err.to_string()))
}

fn has_typ(env: &SignedEnvelope, typ: &str) -> Verdict<()> {
    if env.header.get("typ").and_then(Value::as_str) == Some(typ) {
        Ok(())
    } else {
        Err(Denial::at(
            Stage::TokenDecode,
            format!("expected typ {typ}"),
        ))
    }
}

/// A credential whose chain verified, with the capabilities it carries for
/// its final holder.
#[derive(Debug, Clone)]
pub struct VerifiedCredential {
    pub root: AccessTokenClaims,
    pub root_compact: String,
    pub issuer: AuthorityDescriptor,
    /// Thumbprints of delegatees, root side first.
    pub holders: Vec<String>,
    pub masks: Vec<CapabilitySet>,
    pub capabilities: CapabilitySet,
}

impl VerifiedCredential {
    fn audit(&self) -> AuditCredential {
        AuditCredential {
            jti: self.root.jti.clone(),
            iss: self.root.iss.clone(),
            index: self.root.status().revocation_list_index,
            subject: self.root.cnf.jwk.thumbprint(),
            holders: self.holders.clone(),
            masks: self.masks.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResourceServerConfig {
    pub resource_table: ResourceTable,
    pub revocation_mode: RevocationMode,
    pub cache_max_age_secs: i64,
    /// Origin used to reconstruct request URIs for DPoP `htu` checks.
    pub public_url: Option<String>,
    pub freshness: FreshnessWindow,
}

impl ResourceServerConfig {
    pub fn new(resource_table: ResourceTable) -> Self {
        ResourceServerConfig {
            resource_table,
            revocation_mode: RevocationMode::default(),
            cache_max_age_secs: DEFAULT_CACHE_MAX_AGE_SECS,
            public_url: None,
            freshness: FreshnessWindow::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResourceRequest {
    pub method: String,
    /// Absolute request URI as the client addressed it.
    pub uri: String,
    pub dpop: Option<String>,
    pub authorization: Option<String>,
    pub body: Vec<u8>,
}

impl ResourceRequest {
    pub fn new(method: &str, uri: &str) -> Self {
        ResourceRequest {
            method: method.to_string(),
            uri: uri.to_string(),
            dpop: None,
            authorization: None,
            body: Vec::new(),
        }
    }

    pub fn with_credentials(mut self, token: &str, proof: &str) -> Self {
        self.authorization = Some(format!("DPoP {token}"));
        self.dpop = Some(proof.to_string());
        self
    }

    pub fn with_body(mut self, body: impl Into<Vec<u8>>) -> Self {
        self.body = body.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceResponse {
    pub status: u16,
    pub body: Vec<u8>,
    pub denial: Option<Denial>,
}

impl ResourceResponse {
    fn denied(denial: Denial) -> Self {
        ResourceResponse {
            status: denial.status,
            body: denial.body().to_string().into_bytes(),
            denial: Some(denial),
        }
    }
}

/// Raw path of an absolute URI, percent-decoding left to the caller.
fn uri_path(uri: &str) -> Option<String> {
    url::Url::parse(uri).ok().map(|u| u.path().to_string())
}

fn bearer_token(header: Option<&str>) -> Verdict<&str> {
    let header = header.ok_or_else(|| Denial::at(Stage::TokenDecode, "missing Authorization"))?;
    match header.split_once(' ') {
        Some((scheme, token))
            if scheme.eq_ignore_ascii_case("DPoP") && !token.trim().is_empty() =>
        {
            Ok(token.trim())
        }
        _ => Err(Denial::at(
            Stage::TokenDecode,
            "Authorization scheme must be DPoP",
        )),
    }
}

pub struct ResourceServer {
    table: ResourceTable,
    store: Arc<dyn ObjectStore>,
    revocation: RevocationChecker,
    replay: ReplayCache,
    audit: AuditLog,
    public_url: Option<String>,
}

struct Evaluation {
    path: Option<ResourcePath>,
    operation: Option<Operation>,
    prover: Option<Jwk>,
    credentials: Vec<VerifiedCredential>,
}

impl ResourceServer {
    pub fn new(
        config: ResourceServerConfig,
        store: Arc<dyn ObjectStore>,
        client: Arc<dyn AuthorityClient>,
        audit: AuditLog,
    ) -> Self {
        ResourceServer {
            table: config.resource_table,
            store,
            revocation: RevocationChecker::new(
                config.revocation_mode,
                config.cache_max_age_secs,
                client,
            ),
            replay: ReplayCache::new(config.freshness, 1 << 20),
            audit,
            public_url: config
                .public_url
                .map(|u| u.trim_end_matches('/').to_string()),
        }
    }

    pub fn resource_table(&self) -> &ResourceTable {
        &self.table
    }

    pub fn public_url(&self) -> Option<&str> {
        self.public_url.as_deref()
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.audit
    }

    pub async fn handle_resource_request(
        &self,
        req: &ResourceRequest,
        now: i64,
    ) -> ResourceResponse {
        let mut eval = Evaluation {
            path: None,
            operation: None,
            prover: None,
            credentials: Vec::new(),
        };
        let verdict = self.authorize(req, now, &mut eval).await;
        let response = match verdict {
            Ok(path) => self.execute(&req.method, &path, &req.body),
            Err(denial) => ResourceResponse::denied(denial),
        };
        let denial = response.denial.as_ref();
        self.audit.record(AuditRecord {
            ts: now,
            method: req.method.clone(),
            path: eval
                .path
                .as_ref()
                .map(|p| p.to_string())
                .unwrap_or_else(|| uri_path(&req.uri).unwrap_or_default()),
            operation: eval.operation,
            prover: eval.prover.as_ref().map(Jwk::thumbprint),
            decision: if denial.is_none() {
                Decision::Grant
            } else {
                Decision::Deny
            },
            stage: denial.map(|d| d.stage),
            status: response.status,
            error: denial.map(|d| d.error.to_string()),
            credentials: eval
                .credentials
                .iter()
                .map(VerifiedCredential::audit)
                .collect(),
        });
        response
    }

    async fn authorize(
        &self,
        req: &ResourceRequest,
        now: i64,
        eval: &mut Evaluation,
    ) -> Verdict<ResourcePath> {
        let op = operation_for(&req.method).ok_or_else(|| {
            Denial::at(Stage::Path, format!("method {} not supported", req.method))
        })?;
        eval.operation = Some(op);
        let raw = uri_path(&req.uri)
            .ok_or_else(|| Denial::at(Stage::Path, "request URI is not absolute"))?;
        let path = normalize_path(&raw).map_err(|err| Denial::at(Stage::Path, err.to_string()))?;
        eval.path = Some(path.clone());

        let governing = self
            .table
            .lookup_authority(&path)
            .map_err(|err| Denial::at(Stage::Authority, err.to_string()))?
            .clone();

        let proof = req
            .dpop
            .as_deref()
            .ok_or_else(|| Denial::at(Stage::Dpop, "missing DPoP header"))?;
        let prover = dpop::verify_proof(proof, &req.method, &req.uri, now, &self.replay)
            .map_err(|err| Denial::at(Stage::Dpop, err.to_string()))?;
        eval.prover = Some(prover.clone());

        let token = bearer_token(req.authorization.as_deref())?;
        let credentials = self
            .verify_presented(token, &prover, &governing, now)
            .await?;
        // Only credentials from the path's own authority count toward it.
        eval.credentials = credentials
            .into_iter()
            .filter(|c| c.issuer.url == governing.url)
            .collect();
        let granted = eval
            .credentials
            .iter()
            .any(|c| c.capabilities.grants(&path, op));
        if !granted {
            return Err(Denial::at(
                Stage::Capability,
                format!("no capability grants {op} on {path}"),
            ));
        }
        Ok(path)
    }

    async fn verify_presented(
        &self,
        token: &str,
        prover: &Jwk,
        governing: &AuthorityDescriptor,
        now: i64,
    ) -> Verdict<Vec<VerifiedCredential>> {
        let env = decode(token)?;
        if env.claims.contains_key("vp") {
            self.verify_presentation_credentials(token, prover, now)
                .await
        } else {
            let credential = self.verify_chain(token, prover, Some(governing), now, 0)?;
            self.check_revocation(&credential, now).await?;
            Ok(vec![credential])
        }
    }

    /// Verifies a presentation signed by `prover` and returns the union of
    /// its credentials' capabilities. Any failing inner token rejects the
    /// whole presentation.
    pub async fn verify_presentation(
        &self,
        compact: &str,
        prover: &Jwk,
        now: i64,
    ) -> Verdict<CapabilitySet> {
        let credentials = self
            .verify_presentation_credentials(compact, prover, now)
            .await?;
        Ok(CapabilitySet::union(
            credentials.into_iter().map(|c| c.capabilities),
        ))
    }

    async fn verify_presentation_credentials(
        &self,
        compact: &str,
        prover: &Jwk,
        now: i64,
    ) -> Verdict<Vec<VerifiedCredential>> {
        let env = decode(compact)?;
        has_typ(&env, PRESENTATION_TYP)?;
        let claims: PresentationClaims = parse_claims(env.claims)?;
        if claims.iss != prover.thumbprint() {
            return Err(Denial::at(
                Stage::Issuer,
                "presentation iss is not the prover's thumbprint",
            ));
        }
        jose::verify_envelope(compact, prover)
            .map_err(|err| Denial::at(Stage::Signature, format!("presentation: {err}")))?;
        let mut credentials = Vec::with_capacity(claims.vp.len());
        for inner in &claims.vp {
            credentials.push(self.verify_chain(inner, prover, None, now, 0)?);
        }
        for credential in &credentials {
            self.check_revocation(credential, now).await?;
        }
        Ok(credentials)
    }

    async fn check_revocation(&self, credential: &VerifiedCredential, now: i64) -> Verdict<()> {
        let active = self
            .revocation
            .is_active(
                &credential.root_compact,
                &credential.root,
                &credential.issuer,
                now,
            )
            .await;
        if active {
            Ok(())
        } else {
            Err(Denial::at(
                Stage::Revocation,
                format!("credential {} is not active", credential.root.jti),
            ))
        }
    }

    /// Verifies `compact` (a root token or a delegation chain) as held by
    /// `holder`. With `expected` set, the root issuer must be that authority;
    /// otherwise it must be some authority in the resource table.
    fn verify_chain(
        &self,
        compact: &str,
        holder: &Jwk,
        expected: Option<&AuthorityDescriptor>,
        now: i64,
        depth: usize,
    ) -> Verdict<VerifiedCredential> {
        let env = decode(compact)?;
        if env.claims.contains_key("vp") {
            return Err(Denial::at(
                Stage::TokenDecode,
                "presentations cannot be nested",
            ));
        }
        if !env.claims.contains_key("parent") {
            let issuer = match expected {
                Some(issuer) => issuer.clone(),
                None => {
                    let iss = env
                        .claims
                        .get("iss")
                        .and_then(Value::as_str)
                        .unwrap_or_default();
                    self.table.authority_by_url(iss).cloned().ok_or_else(|| {
                        Denial::at(Stage::Issuer, format!("unknown issuer `{iss}`"))
                    })?
                }
            };
            let root = verify_access_token(compact, &issuer, holder, now)?;
            return Ok(VerifiedCredential {
                capabilities: root.capabilities().clone(),
                root,
                root_compact: compact.to_string(),
                issuer,
                holders: Vec::new(),
                masks: Vec::new(),
            });
        }

        if depth >= MAX_DELEGATION_DEPTH {
            return Err(Denial::at(Stage::TokenDecode, "delegation chain too deep"));
        }
        has_typ(&env, DELEGATION_TYP)?;
        let claims: DelegationClaims = parse_claims(env.claims)?;
        let parent_env = decode(&claims.parent)?;
        let delegator: Jwk = parent_env
            .claims
            .get("cnf")
            .and_then(|cnf| cnf.get("jwk"))
            .cloned()
            .and_then(|jwk| serde_json::from_value(jwk).ok())
            .ok_or_else(|| Denial::at(Stage::TokenDecode, "parent has no cnf key"))?;
        if claims.iss != delegator.thumbprint() {
            return Err(Denial::at(
                Stage::Issuer,
                "delegation iss is not the parent holder",
            ));
        }
        jose::verify_envelope(compact, &delegator)
            .map_err(|err| Denial::at(Stage::Signature, format!("delegation: {err}")))?;
        if claims.cnf.jwk != *holder {
            return Err(Denial::at(
                Stage::KeyBinding,
                "delegatee key differs from the DPoP key",
            ));
        }
        if claims.iat >= claims.exp || now >= claims.exp {
            return Err(Denial::at(Stage::Expiry, "delegation expired"));
        }
        let mut parent = self.verify_chain(&claims.parent, &delegator, expected, now, depth + 1)?;
        parent.capabilities = attenuate(&parent.capabilities, &claims.att);
        parent.holders.push(holder.thumbprint());
        parent.masks.push(claims.att);
        Ok(parent)
    }

    fn execute(&self, method: &str, path: &ResourcePath, body: &[u8]) -> ResourceResponse {
        let result = match method {
            "GET" => self.store.get(path),
            "DELETE" => self.store.delete(path).map(|_| Vec::new()),
            _ => self.store.put(path, body).map(|_| {
                json!({ "stored": path, "bytes": body.len() })
                    .to_string()
                    .into_bytes()
            }),
        };
        match result {
            Ok(body) => ResourceResponse {
                status: 200,
                body,
                denial: None,
            },
            Err(StoreError::NotFound(_)) => {
                let mut denial = Denial::at(Stage::Storage, format!("no object at {path}"));
                denial.status = 404;
                denial.error = "not_found";
                ResourceResponse::denied(denial)
            }
            Err(err) => ResourceResponse::denied(Denial::at(Stage::Storage, err.to_string())),
        }
    }
}
