use serde::{Deserialize, Serialize};

use crate::authsvc::Confirmation;
use crate::capmodel::CapabilitySet;

pub const PRESENTATION_TYP: &str = "vp+jwt";
pub const DELEGATION_TYP: &str = "delegation+jwt";
/// Longest accepted chain of delegations above a root token.
pub const MAX_DELEGATION_DEPTH: usize = 4;

/// Holder-signed bundle of access tokens. `iss` is the holder's thumbprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentationClaims {
    pub iss: String,
    pub vp: Vec<String>,
    pub iat: i64,
}

/// A token re-issued by its holder to another key under a narrower mask.
///
/// Signed by the delegator, whose thumbprint is `iss`; `parent` is the
/// delegator's own token, verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationClaims {
    pub iss: String,
    pub cnf: Confirmation,
    pub parent: String,
    pub att: CapabilitySet,
    pub iat: i64,
    pub exp: i64,
    pub jti: String,
}
