use serde::{Deserialize, Serialize};

use crate::capmodel::{CapabilitySet, CredentialStatus};
use crate::jose::Jwk;

pub const ACCESS_TOKEN_TYP: &str = "at+jwt";
pub const STATUS_LIST_TYP: &str = "statuslist+jwt";
pub const VC_CONTEXT: &str = "https://www.w3.org/2018/credentials/v1";
pub const CAPABILITY_CREDENTIAL_TYPE: &str = "CapabilityCredential";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirmation {
    pub jwk: Jwk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialSubject {
    pub capabilities: CapabilitySet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CapabilityCredential {
    #[serde(rename = "@context")]
    pub context: Vec<String>,
    #[serde(rename = "type")]
    pub types: Vec<String>,
    pub credential_subject: CredentialSubject,
    pub credential_status: CredentialStatus,
}

/// Claims of an issued access token: a capability credential bound to the
/// holder's key through `cnf`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessTokenClaims {
    pub iss: String,
    pub sub: String,
    pub cnf: Confirmation,
    pub vc: CapabilityCredential,
    pub iat: i64,
    pub exp: i64,
    pub jti: String,
}

impl AccessTokenClaims {
    pub fn capabilities(&self) -> &CapabilitySet {
        &self.vc.credential_subject.capabilities
    }

    pub fn status(&self) -> &CredentialStatus {
        &self.vc.credential_status
    }

    pub fn is_well_formed(&self) -> bool {
        self.iat < self.exp
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatusListCredential {
    #[serde(rename = "@context")]
    pub context: Vec<String>,
    #[serde(rename = "type")]
    pub types: Vec<String>,
    pub credential_subject: super::status_list::StatusListSubject,
}

/// Claims of the signed revocation-list credential served at `/status-list`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusListClaims {
    pub iss: String,
    pub iat: i64,
    pub vc: StatusListCredential,
}
