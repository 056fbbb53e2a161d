//! In-process deployment: two authorities, one resource server.
#![allow(dead_code)]

use std::sync::Arc;

use capvc::authsvc::{Authority, AuthorityConfig};
use capvc::capmodel::{
    sample_capabilities, AccessTable, AuthorityDescriptor, ResourcePath, ResourceTable, Thumbprint,
};
use capvc::dpop;
use capvc::jose::{KeyPair, SignatureAlgorithm};
use capvc::ressvc::{
    AuditLog, LocalAuthorityClient, MemoryStore, ResourceRequest, ResourceResponse, ResourceServer,
    ResourceServerConfig, RevocationMode,
};

pub const DRONE1_URL: &str = "https://drone1-operator.example";
pub const DRONE2_URL: &str = "https://drone2-operator.example";
pub const STORAGE_ORIGIN: &str = "https://storage.example";

pub fn key(seed: &str) -> KeyPair {
    KeyPair::generate(SignatureAlgorithm::EdDsa, Some(seed.as_bytes())).unwrap()
}

pub struct World {
    pub drone1: Arc<Authority>,
    pub drone2: Arc<Authority>,
    pub authorities: Arc<LocalAuthorityClient>,
    pub store: Arc<MemoryStore>,
    pub server: ResourceServer,
    pub bma: KeyPair,
}

impl World {
    pub fn new(mode: RevocationMode, max_age_secs: i64) -> Self {
        let bma = key("bma");
        let mut table = AccessTable::new();
        table.grant(Thumbprint::of(bma.public()), sample_capabilities());
        let drone1 = Arc::new(
            Authority::new(
                AuthorityConfig::new(DRONE1_URL, table.clone()),
                key("drone1-auth"),
            )
            .unwrap(),
        );
        let drone2 = Arc::new(
            Authority::new(AuthorityConfig::new(DRONE2_URL, table), key("drone2-auth")).unwrap(),
        );
        let mut resources = ResourceTable::new();
        for (prefix, auth) in [("/data/drone1", &drone1), ("/data/drone2", &drone2)] {
            resources.insert(
                ResourcePath::parse(prefix).unwrap(),
                AuthorityDescriptor {
                    url: auth.url().into(),
                    jwk: auth.public_key().clone(),
                },
            );
        }
        let authorities = Arc::new(LocalAuthorityClient::new([drone1.clone(), drone2.clone()]));
        let store = Arc::new(MemoryStore::new());
        let mut config = ResourceServerConfig::new(resources);
        config.revocation_mode = mode;
        config.cache_max_age_secs = max_age_secs;
        config.public_url = Some(STORAGE_ORIGIN.into());
        let server = ResourceServer::new(
            config,
            store.clone(),
            authorities.clone(),
            AuditLog::memory(),
        );
        World {
            drone1,
            drone2,
            authorities,
            store,
            server,
            bma,
        }
    }

    pub fn standard() -> Self {
        World::new(RevocationMode::StatusList, 60)
    }

    /// Obtains a token through the token endpoint.
    pub fn token(&self, authority: &Authority, holder: &KeyPair, now: i64) -> String {
        let proof = dpop::create_proof(holder, "POST", &authority.token_endpoint(), now).unwrap();
        authority
            .handle_token_request("POST", Some(&proof), now)
            .unwrap()
            .access_token
    }

    pub fn request(
        &self,
        method: &str,
        path: &str,
        token: &str,
        holder: &KeyPair,
        now: i64,
    ) -> ResourceRequest {
        let uri = format!("{STORAGE_ORIGIN}{path}");
        let proof = dpop::create_proof(holder, method, &uri, now).unwrap();
        ResourceRequest::new(method, &uri).with_credentials(token, &proof)
    }

    pub fn send(
        &self,
        method: &str,
        path: &str,
        token: &str,
        holder: &KeyPair,
        now: i64,
    ) -> ResourceResponse {
        let req = self
            .request(method, path, token, holder, now)
            .with_body(b"payload".to_vec());
        block_on(self.server.handle_resource_request(&req, now))
    }
}

pub fn block_on<F: std::future::Future>(fut: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap()
        .block_on(fut)
}
