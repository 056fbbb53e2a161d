//! Client side: token acquisition, presentations, delegation and DPoP-bound
//! resource access.

mod claims;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::authsvc::{AccessTokenClaims, Confirmation, TokenResponse};
use crate::capmodel::{attenuate, CapabilitySet};
use crate::dpop::{self, DpopError};
use crate::jose::{self, JoseError, Jwk, KeyPair, SignedEnvelope};

pub use claims::{
    DelegationClaims, PresentationClaims, DELEGATION_TYP, MAX_DELEGATION_DEPTH, PRESENTATION_TYP,
};

pub const DEFAULT_DELEGATION_LIFETIME_SECS: i64 = 3600;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("denied ({status}): {error}: {description}")]
    Denied {
        status: u16,
        error: String,
        description: String,
    },
    #[error("unexpected response ({status}): {body}")]
    Server { status: u16, body: String },
    #[error("invalid token: {0}")]
    InvalidToken(String),
    #[error("token {index} is bound to a different key")]
    CnfMismatch { index: usize },
    #[error("a presentation needs at least one token")]
    EmptyPresentation,
    #[error("mask grants more than the parent token")]
    MaskExceedsParent,
    #[error("signing key is not the parent token's holder")]
    NotBound,
    #[error(transparent)]
    Jose(#[from] JoseError),
    #[error(transparent)]
    Dpop(#[from] DpopError),
}

impl ClientError {
    /// 2 for authorization denials, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Denied { .. } => 2,
            _ => 1,
        }
    }
}

fn transport(err: reqwest::Error) -> ClientError {
    ClientError::Transport(err.to_string())
}

fn denial_from(status: u16, body: &str) -> ClientError {
    match serde_json::from_str::<Value>(body) {
        Ok(v) if v.get("error").is_some() && matches!(status, 400 | 401 | 403) => {
            let field = |k: &str| {
                v.get(k)
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string()
            };
            ClientError::Denied {
                status,
                error: field("error"),
                description: field("error_description"),
            }
        }
        _ => ClientError::Server {
            status,
            body: body.to_string(),
        },
    }
}

fn typed_header(typ: &str) -> Map<String, Value> {
    let mut header = Map::new();
    header.insert("typ".into(), typ.into());
    header
}

fn holder_of(compact: &str) -> Result<Jwk, ClientError> {
    let env = SignedEnvelope::decode_unverified(compact)?;
    env.claims
        .get("cnf")
        .and_then(|cnf| cnf.get("jwk"))
        .cloned()
        .and_then(|jwk| serde_json::from_value(jwk).ok())
        .ok_or_else(|| ClientError::InvalidToken("no cnf key".into()))
}

/// Capabilities and expiry a token or delegation chain claims to carry,
/// read without verifying any signature.
pub fn claimed_capabilities(compact: &str) -> Result<(CapabilitySet, i64), ClientError> {
    claimed_at_depth(compact, 0)
}

fn claimed_at_depth(compact: &str, depth: usize) -> Result<(CapabilitySet, i64), ClientError> {
    let env = SignedEnvelope::decode_unverified(compact)?;
    let invalid = |err: serde_json::Error| ClientError::InvalidToken(err.to_string());
    if env.claims.contains_key("parent") {
        if depth >= MAX_DELEGATION_DEPTH {
            return Err(ClientError::InvalidToken(
                "delegation chain too deep".into(),
            ));
        }
        let claims: DelegationClaims =
            serde_json::from_value(Value::Object(env.claims)).map_err(invalid)?;
        let (parent_caps, parent_exp) = claimed_at_depth(&claims.parent, depth + 1)?;
        Ok((
            attenuate(&parent_caps, &claims.att),
            claims.exp.min(parent_exp),
        ))
    } else {
        let claims: AccessTokenClaims =
            serde_json::from_value(Value::Object(env.claims)).map_err(invalid)?;
        Ok((claims.capabilities().clone(), claims.exp))
    }
}

/// Requests an access token from `authority_url` with a DPoP proof by `key`.
/// The token is checked against the authority's published key.
pub async fn request_token(
    http: &reqwest::Client,
    authority_url: &str,
    key: &KeyPair,
) -> Result<String, ClientError> {
    let authority_url = authority_url.trim_end_matches('/');
    let endpoint = format!("{authority_url}/token");
    let proof = dpop::create_proof(key, "POST", &endpoint, crate::unix_now())?;
    let resp = http
        .post(&endpoint)
        .header("DPoP", proof)
        .send()
        .await
        .map_err(transport)?;
    let status = resp.status().as_u16();
    let body = resp.text().await.map_err(transport)?;
    if status != 200 {
        return Err(denial_from(status, &body));
    }
    let token: TokenResponse =
        serde_json::from_str(&body).map_err(|err| ClientError::InvalidToken(err.to_string()))?;

    let authority_key: Jwk = http
        .get(format!("{authority_url}/jwk"))
        .send()
        .await
        .and_then(|r| r.error_for_status())
        .map_err(transport)?
        .json()
        .await
        .map_err(transport)?;
    jose::verify_envelope(&token.access_token, &authority_key)?;
    if holder_of(&token.access_token)? != *key.public() {
        return Err(ClientError::InvalidToken(
            "token is bound to a different key".into(),
        ));
    }
    Ok(token.access_token)
}

/// Bundles `tokens` into a presentation signed by `key`. Duplicates are
/// dropped, keeping first occurrences in order.
pub fn combine_presentation(
    tokens: &[String],
    key: &KeyPair,
    now: i64,
) -> Result<String, ClientError> {
    if tokens.is_empty() {
        return Err(ClientError::EmptyPresentation);
    }
    let mut vp: Vec<String> = Vec::with_capacity(tokens.len());
    for (index, token) in tokens.iter().enumerate() {
        if holder_of(token)? != *key.public() {
            return Err(ClientError::CnfMismatch { index });
        }
        if !vp.contains(token) {
            vp.push(token.clone());
        }
    }
    let claims = PresentationClaims {
        iss: key.thumbprint(),
        vp,
        iat: now,
    };
    Ok(jose::sign_serializable(typed_header(PRESENTATION_TYP), &claims, key)?.compact)
}

/// Re-issues `parent` to `delegatee`, narrowed to `mask`. The delegation
/// expires no later than its parent.
pub fn delegate(
    parent: &str,
    delegatee: &Jwk,
    mask: &CapabilitySet,
    key: &KeyPair,
    lifetime_secs: i64,
    now: i64,
) -> Result<String, ClientError> {
    if holder_of(parent)? != *key.public() {
        return Err(ClientError::NotBound);
    }
    let (parent_caps, parent_exp) = claimed_capabilities(parent)?;
    if mask.is_empty() || !mask.is_subset_of(&parent_caps) {
        return Err(ClientError::MaskExceedsParent);
    }
    let claims = DelegationClaims {
        iss: key.thumbprint(),
        cnf: Confirmation {
            jwk: delegatee.clone(),
        },
        parent: parent.to_string(),
        att: mask.clone(),
        iat: now,
        exp: parent_exp.min(now + lifetime_secs),
        jti: jose::b64url_encode(rand::random::<[u8; 16]>()),
    };
    Ok(jose::sign_serializable(typed_header(DELEGATION_TYP), &claims, key)?.compact)
}

#[derive(Debug, Clone, Default)]
pub struct AccessOptions {
    /// Send this proof instead of minting a fresh one.
    pub proof: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AccessOutcome {
    pub status: u16,
    pub body: Vec<u8>,
    /// The proof that was sent.
    pub proof: String,
}

impl AccessOutcome {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

/// Sends `method url` with `Authorization: DPoP <token>` and a DPoP proof.
/// Server error responses come back as outcomes, not errors.
pub async fn access_resource(
    http: &reqwest::Client,
    url: &str,
    token: &str,
    key: &KeyPair,
    method: &str,
    body: Option<Vec<u8>>,
    options: &AccessOptions,
) -> Result<AccessOutcome, ClientError> {
    let proof = match &options.proof {
        Some(proof) => proof.clone(),
        None => dpop::create_proof(key, method, url, crate::unix_now())?,
    };
    let method_value = reqwest::Method::from_bytes(method.as_bytes())
        .map_err(|err| ClientError::Transport(err.to_string()))?;
    let mut request = http
        .request(method_value, url)
        .header("Authorization", format!("DPoP {token}"))
        .header("DPoP", &proof);
    if let Some(body) = body {
        request = request.body(body);
    }
    let resp = request.send().await.map_err(transport)?;
    let status = resp.status().as_u16();
    let body = resp.bytes().await.map_err(transport)?.to_vec();
    Ok(AccessOutcome {
        status,
        body,
        proof,
    })
}

/// Maps a resource response to an error when it is not a success.
pub fn outcome_error(outcome: &AccessOutcome) -> Option<ClientError> {
    (!outcome.is_success())
        .then(|| denial_from(outcome.status, &String::from_utf8_lossy(&outcome.body)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authsvc::{Authority, AuthorityConfig};
    use crate::capmodel::{sample_capabilities, AccessTable, Operation};
    use crate::jose::SignatureAlgorithm;

    const NOW: i64 = 1_700_000_000;

    fn authority() -> Authority {
        let key = KeyPair::generate(SignatureAlgorithm::EdDsa, Some(b"client-test-auth")).unwrap();
        Authority::new(
            AuthorityConfig::new("https://a.example", AccessTable::new()),
            key,
        )
        .unwrap()
    }

    fn key(seed: &[u8]) -> KeyPair {
        KeyPair::generate(SignatureAlgorithm::EdDsa, Some(seed)).unwrap()
    }

    #[test]
    fn presentation_dedupes_in_order_and_checks_binding() {
        let auth = authority();
        let bma = key(b"bma");
        let t1 = auth
            .issue_access_token(bma.public(), &sample_capabilities(), NOW)
            .unwrap();
        let t2 = auth
            .issue_access_token(bma.public(), &sample_capabilities(), NOW)
            .unwrap();
        let vp = combine_presentation(&[t1.clone(), t2.clone(), t1.clone()], &bma, NOW).unwrap();
        let (header, claims) = jose::verify_envelope(&vp, bma.public()).unwrap();
        assert_eq!(header["typ"], PRESENTATION_TYP);
        let claims: PresentationClaims = serde_json::from_value(Value::Object(claims)).unwrap();
        assert_eq!(claims.vp, vec![t1.clone(), t2]);
        assert_eq!(claims.iss, bma.thumbprint());

        let other = auth
            .issue_access_token(key(b"other").public(), &sample_capabilities(), NOW)
            .unwrap();
        assert!(matches!(
            combine_presentation(&[t1, other], &bma, NOW),
            Err(ClientError::CnfMismatch { index: 1 })
        ));
        assert!(matches!(
            combine_presentation(&[], &bma, NOW),
            Err(ClientError::EmptyPresentation)
        ));
    }

    #[test]
    fn delegation_narrows_and_never_outlives_parent() {
        let auth = authority();
        let bma = key(b"bma");
        let helper = key(b"helper");
        let parent = auth
            .issue_access_token(bma.public(), &sample_capabilities(), NOW)
            .unwrap();
        let mask = CapabilitySet::from_pairs([("/data/drone1", &[Operation::Read][..])]).unwrap();
        let delegated = delegate(&parent, helper.public(), &mask, &bma, 7200, NOW).unwrap();
        let (caps, exp) = claimed_capabilities(&delegated).unwrap();
        assert_eq!(caps, mask);
        assert_eq!(exp, NOW + 3600);

        let wider = CapabilitySet::from_pairs([("/data/drone3", &[Operation::Read][..])]).unwrap();
        assert!(matches!(
            delegate(&parent, helper.public(), &wider, &bma, 60, NOW),
            Err(ClientError::MaskExceedsParent)
        ));
        assert!(matches!(
            delegate(&parent, helper.public(), &mask, &helper, 60, NOW),
            Err(ClientError::NotBound)
        ));
        // The delegatee can pass on a subset of what it received.
        let third = key(b"third");
        let again = delegate(&delegated, third.public(), &mask, &helper, 60, NOW).unwrap();
        assert_eq!(claimed_capabilities(&again).unwrap(), (mask, NOW + 60));
    }

    #[test]
    fn denial_parsing() {
        let err = denial_from(403, r#"{"error":"access_denied","error_description":"x"}"#);
        assert!(matches!(&err, ClientError::Denied { status: 403, .. }));
        assert_eq!(err.exit_code(), 2);
        assert_eq!(denial_from(500, "boom").exit_code(), 1);
    }
}
