//! Public JSON Web Key descriptors and canonical thumbprints.

use std::collections::BTreeMap;
use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD as B64;
use base64::Engine;
use rsa::traits::PublicKeyParts;
use rsa::{BigUint, RsaPublicKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{JoseError, SignatureAlgorithm};

/// Members that only ever appear in private keys.
const PRIVATE_MEMBERS: &[&str] = &["d", "p", "q", "dp", "dq", "qi", "oth", "k"];

const ED25519_KEY_LEN: usize = 32;
const P521_COORD_LEN: usize = 66;
pub(crate) const MIN_RSA_BITS: usize = 2048;

/// Key family, derived from the `kty` member (and `crv` where applicable).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    Ed25519,
    Rsa,
    P521,
}

impl KeyKind {
    fn required_members(self) -> &'static [&'static str] {
        match self {
            KeyKind::Ed25519 => &["crv", "kty", "x"],
            KeyKind::Rsa => &["e", "kty", "n"],
            KeyKind::P521 => &["crv", "kty", "x", "y"],
        }
    }

    pub fn supports(self, alg: SignatureAlgorithm) -> bool {
        matches!(
            (self, alg),
            (KeyKind::Ed25519, SignatureAlgorithm::EdDsa)
                | (KeyKind::Rsa, SignatureAlgorithm::Rs256)
                | (KeyKind::Rsa, SignatureAlgorithm::Ps256)
                | (KeyKind::P521, SignatureAlgorithm::Es512)
        )
    }
}

/// A public key in JSON Web Key form.
///
/// Only public members are accepted; construction fails if a private member
/// such as `d` is present, so serializing a `Jwk` can never leak a secret.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    try_from = "BTreeMap<String, String>",
    into = "BTreeMap<String, String>"
)]
pub struct Jwk {
    members: BTreeMap<String, String>,
    kind: KeyKind,
}

impl Jwk {
    pub fn from_members(members: BTreeMap<String, String>) -> Result<Self, JoseError> {
        if let Some(private) = PRIVATE_MEMBERS.iter().find(|m| members.contains_key(**m)) {
            return Err(JoseError::InvalidKey(format!(
                "private member `{private}` in public key"
            )));
        }
        let kty = members
            .get("kty")
            .ok_or_else(|| JoseError::InvalidKey("missing `kty`".into()))?;
        let kind = match (kty.as_str(), members.get("crv").map(String::as_str)) {
            ("OKP", Some("Ed25519")) => KeyKind::Ed25519,
            ("OKP", crv) => {
                return Err(JoseError::InvalidKey(format!(
                    "unsupported OKP curve {crv:?}"
                )))
            }
            ("RSA", _) => KeyKind::Rsa,
            ("EC", Some("P-521")) => KeyKind::P521,
            ("EC", crv) => {
                return Err(JoseError::InvalidKey(format!(
                    "unsupported EC curve {crv:?}"
                )))
            }
            (other, _) => return Err(JoseError::InvalidKey(format!("unsupported kty `{other}`"))),
        };
        for member in kind.required_members() {
            let value = members
                .get(*member)
                .ok_or_else(|| JoseError::InvalidKey(format!("missing `{member}`")))?;
            if *member != "kty" && *member != "crv" {
                B64.decode(value).map_err(|_| {
                    JoseError::InvalidKey(format!("member `{member}` is not base64url"))
                })?;
            }
        }
        let jwk = Jwk { members, kind };
        // Structural decode catches wrong lengths and off-curve points early.
        jwk.verifying_key()?;
        Ok(jwk)
    }

    pub fn kind(&self) -> KeyKind {
        self.kind
    }

    pub fn get(&self, member: &str) -> Option<&str> {
        self.members.get(member).map(String::as_str)
    }

    pub fn members(&self) -> &BTreeMap<String, String> {
        &self.members
    }

    /// The required members only, in lexicographic order.
    pub fn canonical_json(&self) -> String {
        let required: BTreeMap<&str, &str> = self
            .kind
            .required_members()
            .iter()
            .map(|m| (*m, self.members[*m].as_str()))
            .collect();
        serde_json::to_string(&required).expect("string map serializes")
    }

    /// SHA-256 over the canonical member subset, as lowercase hex.
    pub fn thumbprint(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub(crate) fn from_ed25519(key: &ed25519_dalek::VerifyingKey) -> Self {
        let members = BTreeMap::from([
            ("kty".to_string(), "OKP".to_string()),
            ("crv".to_string(), "Ed25519".to_string()),
            ("x".to_string(), B64.encode(key.as_bytes())),
        ]);
        Jwk {
            members,
            kind: KeyKind::Ed25519,
        }
    }

    pub(crate) fn from_rsa(key: &RsaPublicKey) -> Self {
        let members = BTreeMap::from([
            ("kty".to_string(), "RSA".to_string()),
            ("n".to_string(), B64.encode(key.n().to_bytes_be())),
            ("e".to_string(), B64.encode(key.e().to_bytes_be())),
        ]);
        Jwk {
            members,
            kind: KeyKind::Rsa,
        }
    }

    pub(crate) fn from_p521(key: &p521::ecdsa::VerifyingKey) -> Self {
        let point = key.to_encoded_point(false);
        let x = point.x().expect("uncompressed point has x");
        let y = point.y().expect("uncompressed point has y");
        let members = BTreeMap::from([
            ("kty".to_string(), "EC".to_string()),
            ("crv".to_string(), "P-521".to_string()),
            ("x".to_string(), B64.encode(x)),
            ("y".to_string(), B64.encode(y)),
        ]);
        Jwk {
            members,
            kind: KeyKind::P521,
        }
    }

    fn decode_member(&self, member: &str) -> Result<Vec<u8>, JoseError> {
        let value = self
            .get(member)
            .ok_or_else(|| JoseError::InvalidKey(format!("missing `{member}`")))?;
        B64.decode(value)
            .map_err(|_| JoseError::InvalidKey(format!("member `{member}` is not base64url")))
    }

    pub(crate) fn verifying_key(&self) -> Result<VerifyingKey, JoseError> {
        match self.kind {
            KeyKind::Ed25519 => {
                let x: [u8; ED25519_KEY_LEN] = self
                    .decode_member("x")?
                    .try_into()
                    .map_err(|_| JoseError::InvalidKey("Ed25519 `x` must be 32 bytes".into()))?;
                ed25519_dalek::VerifyingKey::from_bytes(&x)
                    .map(VerifyingKey::Ed25519)
                    .map_err(|_| JoseError::InvalidKey("invalid Ed25519 point".into()))
            }
            KeyKind::Rsa => {
                let n = BigUint::from_bytes_be(&self.decode_member("n")?);
                let e = BigUint::from_bytes_be(&self.decode_member("e")?);
                let key = RsaPublicKey::new(n, e)
                    .map_err(|err| JoseError::InvalidKey(format!("invalid RSA key: {err}")))?;
                if key.size() * 8 < MIN_RSA_BITS {
                    return Err(JoseError::InvalidKey(format!(
                        "RSA modulus below {MIN_RSA_BITS} bits"
                    )));
                }
                Ok(VerifyingKey::Rsa(Box::new(key)))
            }
            KeyKind::P521 => {
                let x = self.decode_member("x")?;
                let y = self.decode_member("y")?;
                if x.len() != P521_COORD_LEN || y.len() != P521_COORD_LEN {
                    return Err(JoseError::InvalidKey(
                        "P-521 coordinates must be 66 bytes".into(),
                    ));
                }
                let point = p521::EncodedPoint::from_affine_coordinates(
                    x.as_slice().into(),
                    y.as_slice().into(),
                    false,
                );
                p521::ecdsa::VerifyingKey::from_encoded_point(&point)
                    .map(|key| VerifyingKey::P521(Box::new(key)))
                    .map_err(|_| JoseError::InvalidKey("invalid P-521 point".into()))
            }
        }
    }
}

impl TryFrom<BTreeMap<String, String>> for Jwk {
    type Error = JoseError;

    fn try_from(members: BTreeMap<String, String>) -> Result<Self, Self::Error> {
        Jwk::from_members(members)
    }
}

impl From<Jwk> for BTreeMap<String, String> {
    fn from(jwk: Jwk) -> Self {
        jwk.members
    }
}

impl fmt::Debug for Jwk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jwk")
            .field("kind", &self.kind)
            .field("thumbprint", &self.thumbprint())
            .finish()
    }
}

/// Decoded public key material ready for signature checks.
pub(crate) enum VerifyingKey {
    Ed25519(ed25519_dalek::VerifyingKey),
    Rsa(Box<RsaPublicKey>),
    P521(Box<p521::ecdsa::VerifyingKey>),
}
