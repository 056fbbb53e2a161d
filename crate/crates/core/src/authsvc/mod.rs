//! Authorization server: issues DPoP-bound capability credentials as access
//! tokens, answers introspection queries and publishes its revocation list.
//!
//! One [`Authority`] serves one tenant (a drone operator). Index allocation
//! and revocation are serialized behind a single mutex; the access table sits
//! behind an `RwLock` so grants swap in atomically for readers.

mod claims;
mod config;
pub mod http;
mod status_list;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::capmodel::{AccessTable, CapabilitySet, CredentialStatus, Thumbprint};
use crate::dpop::{self, FreshnessWindow, ReplayCache};
use crate::jose::{self, JoseError, Jwk, KeyPair, SignedEnvelope};

pub use claims::{
    AccessTokenClaims, CapabilityCredential, Confirmation, CredentialSubject, StatusListClaims,
    StatusListCredential, ACCESS_TOKEN_TYP, CAPABILITY_CREDENTIAL_TYPE, STATUS_LIST_TYP,
    VC_CONTEXT,
};
pub use config::{AuthorityFileConfig, ConfigError};
pub use status_list::{
    BitString, RevocationList, StatusListError, StatusListSubject, DEFAULT_CAPACITY,
};

pub const DEFAULT_TOKEN_LIFETIME_SECS: i64 = 3600;
const REPLAY_CACHE_CAPACITY: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("cannot issue a token with no capabilities")]
    EmptyCapabilities,
    #[error(transparent)]
    StatusList(#[from] StatusListError),
    #[error("signing failed: {0}")]
    Signing(#[from] JoseError),
}

/// OAuth 2.0 error object with its HTTP status.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{error}: {description}")]
pub struct OAuthError {
    pub status: u16,
    pub error: &'static str,
    pub description: String,
}

impl OAuthError {
    pub fn new(status: u16, error: &'static str, description: impl Into<String>) -> Self {
        OAuthError {
            status,
            error,
            description: description.into(),
        }
    }

    pub fn body(&self) -> Value {
        json!({ "error": self.error, "error_description": self.description })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenResponse {
    pub access_token: String,
    pub token_type: String,
    pub expires_in: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntrospectionResponse {
    pub active: bool,
}

#[derive(Debug, Clone)]
pub struct AuthorityConfig {
    /// Base URL; also the `iss` of every token.
    pub url: String,
    pub access_table: AccessTable,
    pub status_list_capacity: usize,
    pub token_lifetime_secs: i64,
    pub freshness: FreshnessWindow,
}

impl AuthorityConfig {
    pub fn new(url: impl Into<String>, access_table: AccessTable) -> Self {
        AuthorityConfig {
            url: url.into().trim_end_matches('/').to_string(),
            access_table,
            status_list_capacity: DEFAULT_CAPACITY,
            token_lifetime_secs: DEFAULT_TOKEN_LIFETIME_SECS,
            freshness: FreshnessWindow::default(),
        }
    }
}

/// What the authority remembers about one issued credential.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuedRecord {
    pub index: u64,
    pub subject: Thumbprint,
    pub capabilities: CapabilitySet,
    pub iat: i64,
    pub exp: i64,
    pub revoked_at: Option<i64>,
}

/// Export of issuance and revocation state, used for audit replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthoritySnapshot {
    pub url: String,
    pub access_table: AccessTable,
    pub issued: BTreeMap<String, IssuedRecord>,
}

struct RevocationState {
    list: RevocationList,
    issued: HashMap<String, IssuedRecord>,
    jti_by_index: Vec<String>,
    signed_list: String,
}

pub struct Authority {
    url: String,
    keypair: KeyPair,
    token_lifetime_secs: i64,
    access_table: RwLock<AccessTable>,
    state: Mutex<RevocationState>,
    replay: ReplayCache,
}

impl Authority {
    pub fn new(config: AuthorityConfig, keypair: KeyPair) -> Result<Self, AuthError> {
        let list = RevocationList::new(config.status_list_capacity);
        let mut authority = Authority {
            url: config.url,
            keypair,
            token_lifetime_secs: config.token_lifetime_secs,
            access_table: RwLock::new(config.access_table),
            state: Mutex::new(RevocationState {
                list,
                issued: HashMap::new(),
                jti_by_index: Vec::new(),
                signed_list: String::new(),
            }),
            replay: ReplayCache::new(config.freshness, REPLAY_CACHE_CAPACITY),
        };
        let state = authority.state.get_mut().expect("fresh mutex");
        state.signed_list = sign_status_list(
            &authority.url,
            &authority.keypair,
            &state.list,
            crate::unix_now(),
        )?;
        Ok(authority)
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn token_endpoint(&self) -> String {
        format!("{}/token", self.url)
    }

    pub fn introspection_endpoint(&self) -> String {
        format!("{}/introspect", self.url)
    }

    pub fn status_list_url(&self) -> String {
        format!("{}/status-list", self.url)
    }

    pub fn public_key(&self) -> &Jwk {
        self.keypair.public()
    }

    pub fn algorithm(&self) -> jose::SignatureAlgorithm {
        self.keypair.algorithm()
    }

    /// Adds or replaces a subject's grant.
    pub fn grant(&self, subject: Thumbprint, caps: CapabilitySet) {
        self.access_table
            .write()
            .expect("access table poisoned")
            .grant(subject, caps);
    }

    pub fn access_table(&self) -> AccessTable {
        self.access_table
            .read()
            .expect("access table poisoned")
            .clone()
    }

    /// Token endpoint: DPoP-proven request for the caller's capabilities.
    pub fn handle_token_request(
        &self,
        http_method: &str,
        dpop_header: Option<&str>,
        now: i64,
    ) -> Result<TokenResponse, OAuthError> {
        if http_method != "POST" {
            return Err(OAuthError::new(
                400,
                "invalid_request",
                "token requests must use POST",
            ));
        }
        let proof = dpop_header
            .ok_or_else(|| OAuthError::new(400, "invalid_dpop_proof", "missing DPoP header"))?;
        let prover = dpop::verify_proof(proof, "POST", &self.token_endpoint(), now, &self.replay)
            .map_err(|err| OAuthError::new(400, "invalid_dpop_proof", err.to_string()))?;
        let caps = self
            .access_table
            .read()
            .expect("access table poisoned")
            .get(&Thumbprint::of(&prover))
            .cloned()
            .ok_or_else(|| OAuthError::new(403, "access_denied", "key not in access table"))?;
        let access_token = self
            .issue_access_token(&prover, &caps, now)
            .map_err(|err| OAuthError::new(500, "server_error", err.to_string()))?;
        Ok(TokenResponse {
            access_token,
            token_type: "DPoP".into(),
            expires_in: self.token_lifetime_secs,
        })
    }

    /// Signs a credential carrying `caps`, bound to `subject`, with a freshly
    /// allocated revocation index.
    pub fn issue_access_token(
        &self,
        subject: &Jwk,
        caps: &CapabilitySet,
        now: i64,
    ) -> Result<String, AuthError> {
        if caps.is_empty() {
            return Err(AuthError::EmptyCapabilities);
        }
        let jti = jose::b64url_encode(rand::random::<[u8; 16]>());
        let exp = now + self.token_lifetime_secs;
        let index = {
            let mut state = self.state.lock().expect("authority state poisoned");
            let index = state.list.allocate()?;
            state.jti_by_index.push(jti.clone());
            state.issued.insert(
                jti.clone(),
                IssuedRecord {
                    index,
                    subject: Thumbprint::of(subject),
                    capabilities: caps.clone(),
                    iat: now,
                    exp,
                    revoked_at: None,
                },
            );
            index
        };
        let claims = AccessTokenClaims {
            iss: self.url.clone(),
            sub: subject.thumbprint(),
            cnf: Confirmation {
                jwk: subject.clone(),
            },
            vc: CapabilityCredential {
                context: vec![VC_CONTEXT.into()],
                types: vec![
                    "VerifiableCredential".into(),
                    CAPABILITY_CREDENTIAL_TYPE.into(),
                ],
                credential_subject: CredentialSubject {
                    capabilities: caps.clone(),
                },
                credential_status: CredentialStatus {
                    status_list_url: self.status_list_url(),
                    revocation_list_index: index,
                },
            },
            iat: now,
            exp,
            jti,
        };
        let header = typed_header(ACCESS_TOKEN_TYP);
        Ok(jose::sign_serializable(header, &claims, &self.keypair)?.compact)
    }

    /// `active` is true iff this authority issued the token, its signature
    /// verifies, it has not expired and its revocation bit is clear.
    pub fn handle_introspection(&self, token: &str, now: i64) -> IntrospectionResponse {
        IntrospectionResponse {
            active: self.is_active(token, now),
        }
    }

    fn is_active(&self, token: &str, now: i64) -> bool {
        let Ok((_, claims)) = jose::verify_envelope(token, self.keypair.public()) else {
            return false;
        };
        let Ok(claims) = serde_json::from_value::<AccessTokenClaims>(Value::Object(claims)) else {
            return false;
        };
        if claims.iss != self.url || now >= claims.exp {
            return false;
        }
        let state = self.state.lock().expect("authority state poisoned");
        match state.issued.get(&claims.jti) {
            Some(record) => {
                record.index == claims.status().revocation_list_index
                    && !state.list.is_revoked(record.index)
            }
            None => false,
        }
    }

    /// Sets the revocation bit for `index` and re-signs the published list.
    pub fn revoke(&self, index: u64) -> Result<(), AuthError> {
        let now = crate::unix_now();
        let mut state = self.state.lock().expect("authority state poisoned");
        state.list.revoke(index)?;
        let jti = state.jti_by_index[index as usize].clone();
        if let Some(record) = state.issued.get_mut(&jti) {
            record.revoked_at.get_or_insert(now);
        }
        state.signed_list = sign_status_list(&self.url, &self.keypair, &state.list, now)?;
        Ok(())
    }

    /// The current signed status-list credential in compact form.
    pub fn serve_revocation_list(&self) -> String {
        self.state
            .lock()
            .expect("authority state poisoned")
            .signed_list
            .clone()
    }

    pub fn issued_count(&self) -> usize {
        self.state
            .lock()
            .expect("authority state poisoned")
            .list
            .next_index()
    }

    pub fn snapshot(&self) -> AuthoritySnapshot {
        let state = self.state.lock().expect("authority state poisoned");
        AuthoritySnapshot {
            url: self.url.clone(),
            access_table: self.access_table(),
            issued: state
                .issued
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

fn typed_header(typ: &str) -> Map<String, Value> {
    let mut header = Map::new();
    header.insert("typ".into(), typ.into());
    header
}

fn sign_status_list(
    url: &str,
    key: &KeyPair,
    list: &RevocationList,
    now: i64,
) -> Result<String, JoseError> {
    let status_list_url = format!("{url}/status-list");
    let claims = StatusListClaims {
        iss: url.to_string(),
        iat: now,
        vc: StatusListCredential {
            context: vec![VC_CONTEXT.into()],
            types: vec![
                "VerifiableCredential".into(),
                "RevocationListCredential".into(),
            ],
            credential_subject: StatusListSubject {
                id: status_list_url,
                kind: "RevocationList".into(),
                capacity: list.capacity(),
                encoded_list: list.bits().encode(),
            },
        },
    };
    Ok(jose::sign_serializable(typed_header(STATUS_LIST_TYP), &claims, key)?.compact)
}

/// Verifies a status-list credential from `issuer_url` and decodes its bits.
pub fn decode_status_list(
    compact: &str,
    issuer_url: &str,
    issuer_key: &Jwk,
) -> Result<BitString, StatusListError> {
    let (header, claims) = jose::verify_envelope(compact, issuer_key)
        .map_err(|err| StatusListError::Encoding(err.to_string()))?;
    if header.get("typ").and_then(Value::as_str) != Some(STATUS_LIST_TYP) {
        return Err(StatusListError::Encoding(
            "not a status-list credential".into(),
        ));
    }
    let claims: StatusListClaims = serde_json::from_value(Value::Object(claims))
        .map_err(|err| StatusListError::Encoding(err.to_string()))?;
    if claims.iss != issuer_url {
        return Err(StatusListError::Encoding(
            "status list issuer mismatch".into(),
        ));
    }
    claims.vc.credential_subject.decode()
}

/// Decodes an access token's claims without verifying it.
pub fn peek_access_token(compact: &str) -> Option<AccessTokenClaims> {
    let env = SignedEnvelope::decode_unverified(compact).ok()?;
    serde_json::from_value(Value::Object(env.claims)).ok()
}
