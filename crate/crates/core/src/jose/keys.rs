//! Signing keypairs and their on-disk JWK representation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use base64::engine::general_purpose::URL_SAFE_NO_PAD as B64;
use base64::Engine;
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rsa::signature::{RandomizedSigner, SignatureEncoding};
use rsa::traits::{PrivateKeyParts, PublicKeyParts};
use rsa::{BigUint, RsaPrivateKey};
use sha2::{Digest, Sha256};

use super::jwk::{Jwk, KeyKind, MIN_RSA_BITS};
use super::{JoseError, SignatureAlgorithm};

/// RSA modulus size used for RS256 and PS256 keys.
pub const RSA_BITS: usize = 2048;

#[derive(Clone)]
enum SecretKey {
    Ed25519(Box<ed25519_dalek::SigningKey>),
    Rs256(Box<rsa::pkcs1v15::SigningKey<Sha256>>, Box<RsaPrivateKey>),
    Ps256(Box<rsa::pss::BlindedSigningKey<Sha256>>, Box<RsaPrivateKey>),
    Es512(Box<p521::ecdsa::SigningKey>),
}

/// A private signing key bound to one algorithm, with its public descriptor.
#[derive(Clone)]
pub struct KeyPair {
    algorithm: SignatureAlgorithm,
    public: Jwk,
    secret: SecretKey,
}

impl KeyPair {
    /// Generates a fresh keypair.
    ///
    /// With `seed` the result is a pure function of the seed bytes, which is
    /// only meant for tests and reproducible fixtures.
    pub fn generate(algorithm: SignatureAlgorithm, seed: Option<&[u8]>) -> Result<Self, JoseError> {
        match seed {
            Some(seed) => {
                let mut rng = ChaCha20Rng::from_seed(Sha256::digest(seed).into());
                Self::generate_with(algorithm, &mut rng)
            }
            None => Self::generate_with(algorithm, &mut OsRng),
        }
    }

    fn generate_with<R: RngCore + CryptoRng>(
        algorithm: SignatureAlgorithm,
        rng: &mut R,
    ) -> Result<Self, JoseError> {
        match algorithm {
            SignatureAlgorithm::EdDsa => {
                Ok(Self::from_ed25519(ed25519_dalek::SigningKey::generate(rng)))
            }
            SignatureAlgorithm::Rs256 | SignatureAlgorithm::Ps256 => {
                let key = RsaPrivateKey::new(rng, RSA_BITS)
                    .map_err(|err| JoseError::InvalidKey(format!("RSA keygen failed: {err}")))?;
                Ok(Self::from_rsa(algorithm, key))
            }
            SignatureAlgorithm::Es512 => Ok(Self::from_p521(p521::ecdsa::SigningKey::random(rng))),
        }
    }

    fn from_ed25519(key: ed25519_dalek::SigningKey) -> Self {
        KeyPair {
            algorithm: SignatureAlgorithm::EdDsa,
            public: Jwk::from_ed25519(&key.verifying_key()),
            secret: SecretKey::Ed25519(Box::new(key)),
        }
    }

    fn from_rsa(algorithm: SignatureAlgorithm, key: RsaPrivateKey) -> Self {
        let public = Jwk::from_rsa(&key.to_public_key());
        let secret = match algorithm {
            SignatureAlgorithm::Rs256 => SecretKey::Rs256(
                Box::new(rsa::pkcs1v15::SigningKey::new(key.clone())),
                Box::new(key),
            ),
            SignatureAlgorithm::Ps256 => SecretKey::Ps256(
                Box::new(rsa::pss::BlindedSigningKey::new(key.clone())),
                Box::new(key),
            ),
            _ => unreachable!("RSA keys only back RS256/PS256"),
        };
        KeyPair {
            algorithm,
            public,
            secret,
        }
    }

    fn from_p521(key: p521::ecdsa::SigningKey) -> Self {
        KeyPair {
            algorithm: SignatureAlgorithm::Es512,
            public: Jwk::from_p521(&p521::ecdsa::VerifyingKey::from(&key)),
            secret: SecretKey::Es512(Box::new(key)),
        }
    }

    pub fn algorithm(&self) -> SignatureAlgorithm {
        self.algorithm
    }

    pub fn public(&self) -> &Jwk {
        &self.public
    }

    pub fn thumbprint(&self) -> String {
        self.public.thumbprint()
    }

    /// Raw signature bytes in JWS layout (ES512 is fixed-width `r || s`).
    pub(crate) fn sign(&self, message: &[u8]) -> Vec<u8> {
        use ed25519_dalek::Signer;
        match &self.secret {
            SecretKey::Ed25519(key) => key.sign(message).to_bytes().to_vec(),
            SecretKey::Rs256(key, _) => key.sign_with_rng(&mut OsRng, message).to_vec(),
            SecretKey::Ps256(key, _) => key.sign_with_rng(&mut OsRng, message).to_vec(),
            SecretKey::Es512(key) => {
                let signature: p521::ecdsa::Signature = key.sign_with_rng(&mut OsRng, message);
                signature.to_bytes().to_vec()
            }
        }
    }

    /// Private JWK members, including `alg`. The output contains secret material.
    pub fn to_private_jwk(&self) -> BTreeMap<String, String> {
        let mut members = self.public.members().clone();
        members.insert("alg".into(), self.algorithm.as_str().into());
        match &self.secret {
            SecretKey::Ed25519(key) => {
                members.insert("d".into(), B64.encode(key.to_bytes()));
            }
            SecretKey::Rs256(_, key) | SecretKey::Ps256(_, key) => {
                let enc = |n: &BigUint| B64.encode(n.to_bytes_be());
                members.insert("d".into(), enc(key.d()));
                members.insert("p".into(), enc(&key.primes()[0]));
                members.insert("q".into(), enc(&key.primes()[1]));
                if let (Some(dp), Some(dq)) = (key.dp(), key.dq()) {
                    members.insert("dp".into(), enc(dp));
                    members.insert("dq".into(), enc(dq));
                }
                if let Some(qi) = key.crt_coefficient() {
                    members.insert("qi".into(), enc(&qi));
                }
            }
            SecretKey::Es512(key) => {
                members.insert("d".into(), B64.encode(key.to_bytes()));
            }
        }
        members
    }

    pub fn from_private_jwk(members: &BTreeMap<String, String>) -> Result<Self, JoseError> {
        let alg: SignatureAlgorithm = members
            .get("alg")
            .ok_or_else(|| JoseError::InvalidKey("private key file lacks `alg`".into()))?
            .parse()?;
        let decode = |member: &str| -> Result<Vec<u8>, JoseError> {
            let value = members
                .get(member)
                .ok_or_else(|| JoseError::InvalidKey(format!("missing `{member}`")))?;
            B64.decode(value)
                .map_err(|_| JoseError::InvalidKey(format!("member `{member}` is not base64url")))
        };
        let pair = match alg {
            SignatureAlgorithm::EdDsa => {
                let d: [u8; 32] = decode("d")?
                    .try_into()
                    .map_err(|_| JoseError::InvalidKey("Ed25519 `d` must be 32 bytes".into()))?;
                Self::from_ed25519(ed25519_dalek::SigningKey::from_bytes(&d))
            }
            SignatureAlgorithm::Rs256 | SignatureAlgorithm::Ps256 => {
                let big = |m: &str| decode(m).map(|b| BigUint::from_bytes_be(&b));
                let mut key = RsaPrivateKey::from_components(
                    big("n")?,
                    big("e")?,
                    big("d")?,
                    vec![big("p")?, big("q")?],
                )
                .map_err(|err| JoseError::InvalidKey(format!("invalid RSA key: {err}")))?;
                key.precompute()
                    .map_err(|err| JoseError::InvalidKey(format!("invalid RSA key: {err}")))?;
                if key.size() * 8 < MIN_RSA_BITS {
                    return Err(JoseError::InvalidKey(format!(
                        "RSA modulus below {MIN_RSA_BITS} bits"
                    )));
                }
                Self::from_rsa(alg, key)
            }
            SignatureAlgorithm::Es512 => {
                let key = p521::ecdsa::SigningKey::from_slice(&decode("d")?)
                    .map_err(|_| JoseError::InvalidKey("invalid P-521 scalar".into()))?;
                Self::from_p521(key)
            }
        };
        if !pair.public.kind().supports(alg) {
            return Err(JoseError::InvalidKey(
                "key type does not match `alg`".into(),
            ));
        }
        // The stored public members must describe the same key.
        for (member, value) in pair.public.members() {
            if members.get(member) != Some(value) {
                return Err(JoseError::InvalidKey(format!(
                    "public member `{member}` does not match private key"
                )));
            }
        }
        Ok(pair)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(&self.to_private_jwk())?;
        std::fs::write(path, json + "\n")
    }

    pub fn load(path: &Path) -> Result<Self, JoseError> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| JoseError::InvalidKey(format!("{}: {err}", path.display())))?;
        let members: BTreeMap<String, String> = serde_json::from_str(&text)
            .map_err(|err| JoseError::InvalidKey(format!("{}: {err}", path.display())))?;
        Self::from_private_jwk(&members)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("algorithm", &self.algorithm)
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl KeyKind {
    pub fn default_algorithm(self) -> SignatureAlgorithm {
        match self {
            KeyKind::Ed25519 => SignatureAlgorithm::EdDsa,
            KeyKind::Rsa => SignatureAlgorithm::Rs256,
            KeyKind::P521 => SignatureAlgorithm::Es512,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_generation_is_deterministic() {
        let a = KeyPair::generate(SignatureAlgorithm::EdDsa, Some(b"seed S")).unwrap();
        let b = KeyPair::generate(SignatureAlgorithm::EdDsa, Some(b"seed S")).unwrap();
        assert_eq!(a.to_private_jwk(), b.to_private_jwk());
        let c = KeyPair::generate(SignatureAlgorithm::EdDsa, Some(b"seed T")).unwrap();
        assert_ne!(a.public(), c.public());
    }

    #[test]
    fn ed25519_public_descriptor_shape() {
        let key = KeyPair::generate(SignatureAlgorithm::EdDsa, None).unwrap();
        assert_eq!(key.public().get("kty"), Some("OKP"));
        assert_eq!(key.public().get("crv"), Some("Ed25519"));
        assert_eq!(key.public().get("x").unwrap().len(), 43);
        assert!(key.public().get("d").is_none());
    }

    #[test]
    fn private_jwk_round_trips_for_every_algorithm() {
        let dir = tempfile::tempdir().unwrap();
        for alg in SignatureAlgorithm::ALL {
            let key = KeyPair::generate(alg, Some(alg.as_str().as_bytes())).unwrap();
            let path = dir.path().join(format!("{}.jwk", alg.as_str()));
            key.save(&path).unwrap();
            let loaded = KeyPair::load(&path).unwrap();
            assert_eq!(loaded.algorithm(), alg);
            assert_eq!(loaded.public(), key.public());
            let public_json = serde_json::to_string(key.public()).unwrap();
            assert!(!public_json.contains("\"d\""));
        }
    }

    #[test]
    fn tampered_private_file_is_rejected() {
        let key = KeyPair::generate(SignatureAlgorithm::EdDsa, Some(b"a")).unwrap();
        let other = KeyPair::generate(SignatureAlgorithm::EdDsa, Some(b"b")).unwrap();
        let mut members = key.to_private_jwk();
        members.insert("x".into(), other.public().get("x").unwrap().into());
        assert!(KeyPair::from_private_jwk(&members).is_err());
        members.insert("alg".into(), "ES256".into());
        assert!(KeyPair::from_private_jwk(&members).is_err());
    }
}
