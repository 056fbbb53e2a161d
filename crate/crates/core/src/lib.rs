//! Capability-based multi-tenant access management.
//!
//! Authorization servers ([`authsvc`]) issue access tokens that carry
//! verifiable credentials listing path-scoped capabilities ([`capmodel`]).
//! Clients ([`client`]) prove key possession with DPoP ([`dpop`]) and may
//! combine tokens into presentations or delegate attenuated copies. Resource
//! servers ([`ressvc`]) verify every request against the authority that
//! governs the requested path, including revocation. [`bench`] measures the
//! signing algorithms and [`secmodel`] checks the access-control model
//! exhaustively within small bounds.

pub mod authsvc;
pub mod bench;
pub mod capmodel;
pub mod client;
pub mod dpop;
pub mod jose;
pub mod ressvc;
pub mod secmodel;

/// Current Unix time in whole seconds.
pub fn unix_now() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or_default()
}
