//! Revocation checks against the issuing authority, by introspection or by a
//! cached copy of its signed status list. Every failure reads as revoked.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authsvc::{self, AccessTokenClaims, Authority, BitString, IntrospectionResponse};
use crate::capmodel::AuthorityDescriptor;

pub const DEFAULT_CACHE_MAX_AGE_SECS: i64 = 60;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("authority unreachable: {0}")]
pub struct FetchError(pub String);

/// Transport to authorization servers.
#[async_trait]
pub trait AuthorityClient: Send + Sync {
    async fn introspect(&self, issuer_url: &str, token: &str) -> Result<bool, FetchError>;
    async fn fetch_status_list(&self, url: &str) -> Result<String, FetchError>;
}

pub struct HttpAuthorityClient {
    http: reqwest::Client,
}

impl HttpAuthorityClient {
    pub fn new() -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(5))
            .build()
            .expect("static client config");
        HttpAuthorityClient { http }
    }
}

impl Default for HttpAuthorityClient {
    fn default() -> Self {
        Self::new()
    }
}

fn fetch_err(err: impl std::fmt::Display) -> FetchError {
    FetchError(err.to_string())
}

#[async_trait]
impl AuthorityClient for HttpAuthorityClient {
    async fn introspect(&self, issuer_url: &str, token: &str) -> Result<bool, FetchError> {
        let resp = self
            .http
            .post(format!("{issuer_url}/introspect"))
            .form(&[("token", token)])
            .send()
            .await
            .and_then(|r| r.error_for_status())
            .map_err(fetch_err)?;
        let body: IntrospectionResponse = resp.json().await.map_err(fetch_err)?;
        Ok(body.active)
    }

    async fn fetch_status_list(&self, url: &str) -> Result<String, FetchError> {
        let resp = self
            .http
            .get(url)
            .send()
            .await
            .and_then(|r| r.error_for_status())
            .map_err(fetch_err)?;
        let text = resp.text().await.map_err(fetch_err)?;
        Ok(text.trim().to_string())
    }
}

/// Calls authorities in the same process. Counts requests and can simulate
/// an authority going offline.
#[derive(Default)]
pub struct LocalAuthorityClient {
    authorities: RwLock<HashMap<String, Arc<Authority>>>,
    offline: RwLock<HashSet<String>>,
    status_fetches: AtomicUsize,
    introspections: AtomicUsize,
}

impl LocalAuthorityClient {
    pub fn new(authorities: impl IntoIterator<Item = Arc<Authority>>) -> Self {
        let client = LocalAuthorityClient::default();
        for authority in authorities {
            client.register(authority);
        }
        client
    }

    pub fn register(&self, authority: Arc<Authority>) {
        let mut map = self.authorities.write().expect("client poisoned");
        map.insert(authority.url().to_string(), authority);
    }

    pub fn set_offline(&self, url: &str, offline: bool) {
        let mut set = self.offline.write().expect("client poisoned");
        if offline {
            set.insert(url.to_string());
        } else {
            set.remove(url);
        }
    }

    pub fn status_fetches(&self) -> usize {
        self.status_fetches.load(Ordering::SeqCst)
    }

    pub fn introspections(&self) -> usize {
        self.introspections.load(Ordering::SeqCst)
    }

    fn reachable(&self, pick: impl Fn(&Authority) -> bool) -> Result<Arc<Authority>, FetchError> {
        let map = self.authorities.read().expect("client poisoned");
        let authority = map
            .values()
            .find(|a| pick(a))
            .cloned()
            .ok_or_else(|| FetchError("no such authority".into()))?;
        if self
            .offline
            .read()
            .expect("client poisoned")
            .contains(authority.url())
        {
            return Err(FetchError(format!("{} is offline", authority.url())));
        }
        Ok(authority)
    }
}

#[async_trait]
impl AuthorityClient for LocalAuthorityClient {
    async fn introspect(&self, issuer_url: &str, token: &str) -> Result<bool, FetchError> {
        self.introspections.fetch_add(1, Ordering::SeqCst);
        let authority = self.reachable(|a| a.url() == issuer_url)?;
        Ok(authority
            .handle_introspection(token, crate::unix_now())
            .active)
    }

    async fn fetch_status_list(&self, url: &str) -> Result<String, FetchError> {
        self.status_fetches.fetch_add(1, Ordering::SeqCst);
        let authority = self.reachable(|a| a.status_list_url() == url)?;
        Ok(authority.serve_revocation_list())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RevocationMode {
    Introspection,
    #[default]
    StatusList,
}

struct CachedList {
    bits: BitString,
    fetched_at: i64,
}

pub struct RevocationChecker {
    mode: RevocationMode,
    max_age_secs: i64,
    client: Arc<dyn AuthorityClient>,
    cache: Mutex<HashMap<String, Arc<CachedList>>>,
}

impl RevocationChecker {
    pub fn new(mode: RevocationMode, max_age_secs: i64, client: Arc<dyn AuthorityClient>) -> Self {
        RevocationChecker {
            mode,
            max_age_secs,
            client,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn mode(&self) -> RevocationMode {
        self.mode
    }

    /// True iff the issuer reports the token active.
    pub async fn is_active(
        &self,
        token: &str,
        claims: &AccessTokenClaims,
        issuer: &AuthorityDescriptor,
        now: i64,
    ) -> bool {
        match self.mode {
            RevocationMode::Introspection => self
                .client
                .introspect(&issuer.url, token)
                .await
                .unwrap_or(false),
            RevocationMode::StatusList => {
                let status = claims.status();
                match self.status_list(&status.status_list_url, issuer, now).await {
                    Some(list) => !list.bits.get(status.revocation_list_index),
                    None => false,
                }
            }
        }
    }

    async fn status_list(
        &self,
        url: &str,
        issuer: &AuthorityDescriptor,
        now: i64,
    ) -> Option<Arc<CachedList>> {
        let cached = self
            .cache
            .lock()
            .expect("status cache poisoned")
            .get(url)
            .cloned();
        if let Some(entry) = cached {
            if now - entry.fetched_at < self.max_age_secs {
                return Some(entry);
            }
        }
        // Concurrent misses may fetch twice; the later insert wins.
        let compact = self.client.fetch_status_list(url).await.ok()?;
        let bits = authsvc::decode_status_list(&compact, &issuer.url, &issuer.jwk).ok()?;
        let entry = Arc::new(CachedList {
            bits,
            fetched_at: now,
        });
        self.cache
            .lock()
            .expect("status cache poisoned")
            .insert(url.to_string(), entry.clone());
        Some(entry)
    }
}
