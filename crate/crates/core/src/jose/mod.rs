//! Compact JWS signing and verification over four signature algorithms.
//!
//! Every signed artifact in the system (access tokens, DPoP proofs,
//! presentations, delegations, status lists) is a [`SignedEnvelope`] in the
//! three-segment compact form `b64u(header).b64u(claims).b64u(signature)`.
//! The signature covers the ASCII bytes of the first two segments.

mod jwk;
mod keys;

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD as B64;
use base64::Engine;
use rsa::signature::Verifier;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::Sha256;
use thiserror::Error;

pub use jwk::{Jwk, KeyKind};
pub use keys::{KeyPair, RSA_BITS};

use jwk::VerifyingKey;

/// JSON object used for headers and claim sets.
pub type JsonMap = Map<String, Value>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JoseError {
    #[error("compact serialization must have exactly three segments")]
    MalformedCompact,
    #[error("segment is not valid unpadded base64url")]
    MalformedBase64,
    #[error("segment is not a JSON object: {0}")]
    MalformedJson(String),
    #[error("unsupported algorithm `{0}`")]
    UnsupportedAlgorithm(String),
    #[error("header `alg` does not match the key")]
    AlgorithmMismatch,
    #[error("signature does not verify")]
    SignatureMismatch,
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("claims are not serializable: {0}")]
    Serialization(String),
}

impl JoseError {
    /// Stable machine-readable code for this failure.
    pub fn code(&self) -> &'static str {
        match self {
            JoseError::MalformedCompact => "malformed_compact",
            JoseError::MalformedBase64 => "malformed_base64",
            JoseError::MalformedJson(_) => "malformed_json",
            JoseError::UnsupportedAlgorithm(_) => "unsupported_alg",
            JoseError::AlgorithmMismatch => "alg_key_mismatch",
            JoseError::SignatureMismatch => "signature_mismatch",
            JoseError::InvalidKey(_) => "invalid_key",
            JoseError::Serialization(_) => "serialization",
        }
    }
}

/// The four supported JWS algorithms. `EdDSA` always means Ed25519.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SignatureAlgorithm {
    EdDsa,
    Rs256,
    Ps256,
    Es512,
}

impl SignatureAlgorithm {
    pub const ALL: [SignatureAlgorithm; 4] = [
        SignatureAlgorithm::EdDsa,
        SignatureAlgorithm::Rs256,
        SignatureAlgorithm::Ps256,
        SignatureAlgorithm::Es512,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SignatureAlgorithm::EdDsa => "EdDSA",
            SignatureAlgorithm::Rs256 => "RS256",
            SignatureAlgorithm::Ps256 => "PS256",
            SignatureAlgorithm::Es512 => "ES512",
        }
    }
}

impl fmt::Display for SignatureAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignatureAlgorithm {
    type Err = JoseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SignatureAlgorithm::ALL
            .into_iter()
            .find(|alg| alg.as_str() == s)
            .ok_or_else(|| JoseError::UnsupportedAlgorithm(s.to_string()))
    }
}

/// A decoded compact JWS.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedEnvelope {
    pub header: JsonMap,
    pub claims: JsonMap,
    pub signature: Vec<u8>,
    pub compact: String,
}

impl SignedEnvelope {
    /// Decodes all three segments without checking the signature.
    ///
    /// Only for routing decisions (which key to verify with); never trust the
    /// returned claims before [`verify_envelope`] succeeds.
    pub fn decode_unverified(compact: &str) -> Result<Self, JoseError> {
        let parts = split_compact(compact)?;
        Ok(SignedEnvelope {
            header: decode_json_segment(parts.header)?,
            claims: decode_json_segment(parts.claims)?,
            signature: decode_segment(parts.signature)?,
            compact: compact.to_string(),
        })
    }

    pub fn algorithm(&self) -> Result<SignatureAlgorithm, JoseError> {
        header_algorithm(&self.header)
    }
}

struct CompactParts<'a> {
    header: &'a str,
    claims: &'a str,
    signature: &'a str,
    signing_input: &'a str,
}

fn split_compact(compact: &str) -> Result<CompactParts<'_>, JoseError> {
    let mut it = compact.split('.');
    let (Some(header), Some(claims), Some(signature), None) =
        (it.next(), it.next(), it.next(), it.next())
    else {
        return Err(JoseError::MalformedCompact);
    };
    Ok(CompactParts {
        header,
        claims,
        signature,
        signing_input: &compact[..header.len() + 1 + claims.len()],
    })
}

fn decode_segment(segment: &str) -> Result<Vec<u8>, JoseError> {
    B64.decode(segment).map_err(|_| JoseError::MalformedBase64)
}

fn decode_json_segment(segment: &str) -> Result<JsonMap, JoseError> {
    let bytes = decode_segment(segment)?;
    serde_json::from_slice(&bytes).map_err(|err| JoseError::MalformedJson(err.to_string()))
}

fn header_algorithm(header: &JsonMap) -> Result<SignatureAlgorithm, JoseError> {
    match header.get("alg") {
        Some(Value::String(alg)) => alg.parse(),
        Some(other) => Err(JoseError::UnsupportedAlgorithm(other.to_string())),
        None => Err(JoseError::UnsupportedAlgorithm(String::new())),
    }
}

/// Signs `claims` under `key`. A missing `alg` header is filled in from the key.
pub fn sign_envelope(
    mut header: JsonMap,
    claims: JsonMap,
    key: &KeyPair,
) -> Result<SignedEnvelope, JoseError> {
    match header.get("alg") {
        None => {
            header.insert("alg".into(), key.algorithm().as_str().into());
        }
        Some(_) => {
            if header_algorithm(&header)? != key.algorithm() {
                return Err(JoseError::AlgorithmMismatch);
            }
        }
    }
    let header_json =
        serde_json::to_vec(&header).map_err(|err| JoseError::Serialization(err.to_string()))?;
    let claims_json =
        serde_json::to_vec(&claims).map_err(|err| JoseError::Serialization(err.to_string()))?;
    let mut compact = B64.encode(header_json);
    compact.push('.');
    compact.push_str(&B64.encode(claims_json));
    let signature = key.sign(compact.as_bytes());
    compact.push('.');
    compact.push_str(&B64.encode(&signature));
    Ok(SignedEnvelope {
        header,
        claims,
        signature,
        compact,
    })
}

/// Serializes `claims` to a JSON object and signs it.
pub fn sign_serializable<T: Serialize>(
    header: JsonMap,
    claims: &T,
    key: &KeyPair,
) -> Result<SignedEnvelope, JoseError> {
    match serde_json::to_value(claims) {
        Ok(Value::Object(map)) => sign_envelope(header, map, key),
        Ok(_) => Err(JoseError::Serialization(
            "claims must serialize to a JSON object".into(),
        )),
        Err(err) => Err(JoseError::Serialization(err.to_string())),
    }
}

/// Verifies `compact` under `key` and returns the decoded header and claims.
///
/// The signature is checked against the raw signing input before the claims
/// segment is decoded, so any alteration of that segment surfaces as
/// [`JoseError::SignatureMismatch`].
pub fn verify_envelope(compact: &str, key: &Jwk) -> Result<(JsonMap, JsonMap), JoseError> {
    let parts = split_compact(compact)?;
    let header = decode_json_segment(parts.header)?;
    let alg = header_algorithm(&header)?;
    let signature = decode_segment(parts.signature)?;
    if !key.kind().supports(alg) {
        return Err(JoseError::AlgorithmMismatch);
    }
    verify_signature(
        alg,
        &key.verifying_key()?,
        parts.signing_input.as_bytes(),
        &signature,
    )?;
    let claims = decode_json_segment(parts.claims)?;
    Ok((header, claims))
}

fn verify_signature(
    alg: SignatureAlgorithm,
    key: &VerifyingKey,
    message: &[u8],
    signature: &[u8],
) -> Result<(), JoseError> {
    let ok = match (alg, key) {
        (SignatureAlgorithm::EdDsa, VerifyingKey::Ed25519(key)) => {
            ed25519_dalek::Signature::from_slice(signature)
                .map(|sig| key.verify_strict(message, &sig).is_ok())
                .unwrap_or(false)
        }
        (SignatureAlgorithm::Rs256, VerifyingKey::Rsa(key)) => {
            let verifier = rsa::pkcs1v15::VerifyingKey::<Sha256>::new((**key).clone());
            rsa::pkcs1v15::Signature::try_from(signature)
                .map(|sig| verifier.verify(message, &sig).is_ok())
                .unwrap_or(false)
        }
        (SignatureAlgorithm::Ps256, VerifyingKey::Rsa(key)) => {
            let verifier = rsa::pss::VerifyingKey::<Sha256>::new((**key).clone());
            rsa::pss::Signature::try_from(signature)
                .map(|sig| verifier.verify(message, &sig).is_ok())
                .unwrap_or(false)
        }
        (SignatureAlgorithm::Es512, VerifyingKey::P521(key)) => {
            p521::ecdsa::Signature::from_slice(signature)
                .map(|sig| key.verify(message, &sig).is_ok())
                .unwrap_or(false)
        }
        _ => return Err(JoseError::AlgorithmMismatch),
    };
    if ok {
        Ok(())
    } else {
        Err(JoseError::SignatureMismatch)
    }
}

/// Base64url without padding, as used by every compact segment.
pub fn b64url_encode(bytes: impl AsRef<[u8]>) -> String {
    B64.encode(bytes)
}

pub fn b64url_decode(text: &str) -> Result<Vec<u8>, JoseError> {
    decode_segment(text)
}
