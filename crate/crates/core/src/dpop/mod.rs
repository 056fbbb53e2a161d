//! DPoP proofs: a per-request signed message binding an HTTP method and URI
//! to the key in its own header.

mod replay;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use url::Url;

use crate::jose::{self, b64url_encode, JoseError, JsonMap, Jwk, KeyPair, SignedEnvelope};

pub use replay::ReplayCache;

pub const DPOP_TYP: &str = "dpop+jwt";
pub const ALLOWED_METHODS: [&str; 4] = ["GET", "POST", "PUT", "DELETE"];
const JTI_BYTES: usize = 16;
const MIN_JTI_LEN: usize = 16;
const MAX_JTI_LEN: usize = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DpopError {
    #[error("malformed proof: {0}")]
    Malformed(String),
    #[error("proof `typ` is not dpop+jwt")]
    BadTyp,
    #[error("proof signature does not verify under its header key")]
    BadSignature,
    #[error("proof `htm` does not match the request method")]
    MethodMismatch,
    #[error("proof `htu` does not match the request URI")]
    UriMismatch,
    #[error("proof `iat` is too old")]
    StaleIat,
    #[error("proof `iat` is in the future")]
    FutureIat,
    #[error("proof `jti` was already used")]
    ReplayedJti,
    #[error("replay cache is full")]
    CacheFull,
    #[error("invalid request target: {0}")]
    InvalidTarget(String),
}

impl DpopError {
    pub fn code(&self) -> &'static str {
        match self {
            DpopError::Malformed(_) => "malformed_proof",
            DpopError::BadTyp => "bad_typ",
            DpopError::BadSignature => "bad_signature",
            DpopError::MethodMismatch => "method_mismatch",
            DpopError::UriMismatch => "uri_mismatch",
            DpopError::StaleIat => "stale_iat",
            DpopError::FutureIat => "future_iat",
            DpopError::ReplayedJti => "replayed_jti",
            DpopError::CacheFull => "replay_cache_full",
            DpopError::InvalidTarget(_) => "invalid_target",
        }
    }
}

/// Accepted `iat` range relative to the verifier's clock: `[now - max_age, now + future_skew]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreshnessWindow {
    pub max_age_secs: i64,
    pub future_skew_secs: i64,
}

impl Default for FreshnessWindow {
    fn default() -> Self {
        FreshnessWindow {
            max_age_secs: 300,
            future_skew_secs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpopClaims {
    pub htm: String,
    pub htu: String,
    pub iat: i64,
    pub jti: String,
}

fn check_method(method: &str) -> Result<(), DpopError> {
    if ALLOWED_METHODS.contains(&method) {
        Ok(())
    } else {
        Err(DpopError::InvalidTarget(format!(
            "method `{method}` not allowed"
        )))
    }
}

/// Lowercases scheme and host, drops a default port and strips query and fragment.
pub fn normalize_htu(uri: &str) -> Result<String, DpopError> {
    let mut url = Url::parse(uri).map_err(|err| DpopError::InvalidTarget(err.to_string()))?;
    if !matches!(url.scheme(), "http" | "https") || url.host().is_none() {
        return Err(DpopError::InvalidTarget(format!(
            "`{uri}` is not an absolute http(s) URI"
        )));
    }
    url.set_query(None);
    url.set_fragment(None);
    Ok(url.to_string())
}

fn fresh_jti() -> String {
    let mut bytes = [0u8; JTI_BYTES];
    rand::thread_rng().fill_bytes(&mut bytes);
    b64url_encode(bytes)
}

/// Mints a proof for one request.
pub fn create_proof(key: &KeyPair, method: &str, uri: &str, now: i64) -> Result<String, DpopError> {
    check_method(method)?;
    let htu = normalize_htu(uri)?;
    let header = match json!({
        "typ": DPOP_TYP,
        "alg": key.algorithm().as_str(),
        "jwk": key.public(),
    }) {
        Value::Object(map) => map,
        _ => unreachable!(),
    };
    let claims = DpopClaims {
        htm: method.to_string(),
        htu,
        iat: now,
        jti: fresh_jti(),
    };
    jose::sign_serializable(header, &claims, key)
        .map(|env| env.compact)
        .map_err(|err| DpopError::Malformed(err.to_string()))
}

/// Validates a proof against the request it arrived with and records its `jti`.
///
/// Returns the prover's public key (the header `jwk`).
pub fn verify_proof(
    compact: &str,
    expected_method: &str,
    expected_uri: &str,
    now: i64,
    cache: &ReplayCache,
) -> Result<Jwk, DpopError> {
    let unverified = SignedEnvelope::decode_unverified(compact)
        .map_err(|err| DpopError::Malformed(err.to_string()))?;
    if unverified.header.get("typ").and_then(Value::as_str) != Some(DPOP_TYP) {
        return Err(DpopError::BadTyp);
    }
    let jwk: Jwk = unverified
        .header
        .get("jwk")
        .cloned()
        .ok_or_else(|| DpopError::Malformed("header has no `jwk`".into()))
        .and_then(|v| {
            serde_json::from_value(v).map_err(|err| DpopError::Malformed(err.to_string()))
        })?;
    let (_, claims): (JsonMap, JsonMap) =
        jose::verify_envelope(compact, &jwk).map_err(|err| match err {
            JoseError::SignatureMismatch | JoseError::AlgorithmMismatch => DpopError::BadSignature,
            other => DpopError::Malformed(other.to_string()),
        })?;
    let claims: DpopClaims = serde_json::from_value(Value::Object(claims))
        .map_err(|err| DpopError::Malformed(err.to_string()))?;
    if claims.jti.len() < MIN_JTI_LEN || claims.jti.len() > MAX_JTI_LEN {
        return Err(DpopError::Malformed("`jti` length out of range".into()));
    }

    if claims.htm != expected_method.to_ascii_uppercase() {
        return Err(DpopError::MethodMismatch);
    }
    let expected_htu = normalize_htu(expected_uri)?;
    match normalize_htu(&claims.htu) {
        Ok(htu) if htu == expected_htu => {}
        _ => return Err(DpopError::UriMismatch),
    }

    let window = cache.window();
    if claims.iat < now - window.max_age_secs {
        return Err(DpopError::StaleIat);
    }
    if claims.iat > now + window.future_skew_secs {
        return Err(DpopError::FutureIat);
    }
    cache.check_and_insert(&claims.jti, now)?;
    Ok(jwk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jose::SignatureAlgorithm;

    const TOKEN_URI: &str = "https://drone-services.org/token";

    fn key() -> KeyPair {
        KeyPair::generate(SignatureAlgorithm::EdDsa, Some(b"dpop-test")).unwrap()
    }

    #[test]
    fn proof_has_the_expected_shape() {
        let key = key();
        let compact = create_proof(&key, "POST", TOKEN_URI, 1617548847).unwrap();
        let env = SignedEnvelope::decode_unverified(&compact).unwrap();
        assert_eq!(env.header["typ"], "dpop+jwt");
        assert_eq!(env.header["alg"], "EdDSA");
        assert_eq!(env.header["jwk"]["kty"], "OKP");
        assert_eq!(env.header["jwk"]["crv"], "Ed25519");
        assert_eq!(env.header.len(), 3);
        assert_eq!(env.claims["htm"], "POST");
        assert_eq!(env.claims["htu"], TOKEN_URI);
        assert_eq!(env.claims["iat"], 1617548847);
        assert!(env.claims["jti"].as_str().unwrap().len() >= 22);
        assert_eq!(env.claims.len(), 4);
    }

    #[test]
    fn jti_is_unique_per_call() {
        let key = key();
        let a =
            SignedEnvelope::decode_unverified(&create_proof(&key, "GET", TOKEN_URI, 1).unwrap())
                .unwrap();
        let b =
            SignedEnvelope::decode_unverified(&create_proof(&key, "GET", TOKEN_URI, 1).unwrap())
                .unwrap();
        assert_ne!(a.claims["jti"], b.claims["jti"]);
    }

    #[test]
    fn happy_path_returns_prover_key_and_replay_fails() {
        let key = key();
        let cache = ReplayCache::default();
        let now = 1_700_000_000;
        let proof = create_proof(&key, "POST", TOKEN_URI, now).unwrap();
        let jwk = verify_proof(&proof, "POST", TOKEN_URI, now, &cache).unwrap();
        assert_eq!(&jwk, key.public());
        assert_eq!(
            verify_proof(&proof, "POST", TOKEN_URI, now, &cache),
            Err(DpopError::ReplayedJti)
        );
    }

    #[test]
    fn freshness_boundaries() {
        let key = key();
        let cache = ReplayCache::default();
        let now = 1_700_000_000;
        let check = |iat: i64| {
            let proof = create_proof(&key, "GET", TOKEN_URI, iat).unwrap();
            verify_proof(&proof, "GET", TOKEN_URI, now, &cache)
        };
        assert!(check(now - 300).is_ok());
        assert_eq!(check(now - 301), Err(DpopError::StaleIat));
        assert_eq!(check(now - 3600), Err(DpopError::StaleIat));
        assert!(check(now + 30).is_ok());
        assert_eq!(check(now + 31), Err(DpopError::FutureIat));
    }

    #[test]
    fn htu_normalization() {
        assert_eq!(
            normalize_htu("HTTPS://Drone-Services.ORG:443/token?x=1#frag").unwrap(),
            TOKEN_URI
        );
        assert_eq!(normalize_htu("http://h:80/a").unwrap(), "http://h/a");
        assert_eq!(normalize_htu("http://h:8080/a").unwrap(), "http://h:8080/a");
        assert!(normalize_htu("/relative").is_err());
        assert!(normalize_htu("ftp://h/a").is_err());

        let key = key();
        let cache = ReplayCache::default();
        let proof = create_proof(&key, "POST", "https://drone-services.org:443/token", 5).unwrap();
        assert!(verify_proof(
            &proof,
            "POST",
            "https://DRONE-services.org/token?q",
            5,
            &cache
        )
        .is_ok());
    }

    #[test]
    fn rejects_bad_typ_and_foreign_signature() {
        let key = key();
        let other = KeyPair::generate(SignatureAlgorithm::EdDsa, Some(b"other")).unwrap();
        let cache = ReplayCache::default();
        let claims = DpopClaims {
            htm: "GET".into(),
            htu: TOKEN_URI.into(),
            iat: 10,
            jti: "0123456789abcdef0123".into(),
        };
        let header = |typ: &str, jwk: &Jwk| match json!({"typ": typ, "jwk": jwk}) {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        let wrong_typ =
            jose::sign_serializable(header("jwt", key.public()), &claims, &key).unwrap();
        assert_eq!(
            verify_proof(&wrong_typ.compact, "GET", TOKEN_URI, 10, &cache),
            Err(DpopError::BadTyp)
        );
        // Signed by `key` but claiming to speak for `other`.
        let lying =
            jose::sign_serializable(header(DPOP_TYP, other.public()), &claims, &key).unwrap();
        assert_eq!(
            verify_proof(&lying.compact, "GET", TOKEN_URI, 10, &cache),
            Err(DpopError::BadSignature)
        );
        assert!(matches!(
            verify_proof("not.a.proof", "GET", TOKEN_URI, 10, &cache),
            Err(DpopError::Malformed(_))
        ));
    }

    #[test]
    fn rejects_unsupported_methods_at_creation() {
        assert!(matches!(
            create_proof(&key(), "PATCH", TOKEN_URI, 0),
            Err(DpopError::InvalidTarget(_))
        ));
        assert!(matches!(
            create_proof(&key(), "get", TOKEN_URI, 0),
            Err(DpopError::InvalidTarget(_))
        ));
    }
}
