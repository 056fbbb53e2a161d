//! Bounded exhaustive check of the access-control model.
//!
//! A universe has tokens (each valid or not, owned by one authority),
//! authorities (with the tokens they hold), servers (with the tokens they
//! authorize) and revocation servers (a subset of servers, each with a set of
//! revoked tokens). The enumerator builds every universe within [`Bounds`]
//! that satisfies the model's rules; [`check_assertions`] then evaluates the
//! three security assertions on each. Switching a rule off ([`Mutation`])
//! must surface counterexamples, which is how the checker itself is tested.
//!
//! Sets of tokens are bitmasks over token indices.

mod replay;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use replay::{replay_audit, ConformanceReport, Nonconformance, ReplayError, ReplaySnapshot};

/// Largest number of universes a check may enumerate.
pub const UNIVERSE_CAP: u128 = 10_000_000;
const MAX_TOKENS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("bounds must all be at least 1 (revocation servers may be 0)")]
    ZeroBound,
    #[error("bounds admit {count} universes, above the cap of {UNIVERSE_CAP}")]
    TooLarge { count: u128 },
    #[error("invalid bounds `{0}`: expected t,a,s,rs")]
    Parse(String),
    #[error("unknown mutation `{0}`")]
    UnknownMutation(String),
}

/// Maximum entity counts. Each universe has between 1 and the bound of each
/// kind, and at most `min(revocation_servers, servers)` revocation servers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub tokens: usize,
    pub authorities: usize,
    pub servers: usize,
    pub revocation_servers: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            tokens: 3,
            authorities: 2,
            servers: 2,
            revocation_servers: 1,
        }
    }
}

impl Bounds {
    pub fn uniform(n: usize) -> Self {
        Bounds {
            tokens: n,
            authorities: n,
            servers: n,
            revocation_servers: n,
        }
    }

    pub fn validate(&self, rules: Rules) -> Result<(), ModelError> {
        if self.tokens == 0 || self.authorities == 0 || self.servers == 0 {
            return Err(ModelError::ZeroBound);
        }
        let count = if self.tokens > MAX_TOKENS {
            u128::MAX
        } else {
            universe_count(self, rules)
        };
        if count >= UNIVERSE_CAP {
            return Err(ModelError::TooLarge { count });
        }
        Ok(())
    }
}

impl FromStr for Bounds {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| ModelError::Parse(s.into()))?;
        match parts[..] {
            [tokens, authorities, servers, revocation_servers] => Ok(Bounds {
                tokens,
                authorities,
                servers,
                revocation_servers,
            }),
            _ => Err(ModelError::Parse(s.into())),
        }
    }
}

/// The model's facts. All three hold in the faithful model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rules {
    /// An authority holds exactly the tokens it owns.
    pub ownership: bool,
    /// Servers authorize only valid tokens.
    pub validity_filter: bool,
    /// Servers never authorize a token any revocation server revoked.
    pub revocation_exclusion: bool,
}

impl Default for Rules {
    fn default() -> Self {
        Rules {
            ownership: true,
            validity_filter: true,
            revocation_exclusion: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    DropOwnership,
    DropValidityFilter,
    DropRevocationExclusion,
}

impl Mutation {
    pub const ALL: [Mutation; 3] = [
        Mutation::DropOwnership,
        Mutation::DropValidityFilter,
        Mutation::DropRevocationExclusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mutation::DropOwnership => "drop-ownership",
            Mutation::DropValidityFilter => "drop-validity-filter",
            Mutation::DropRevocationExclusion => "drop-revocation-exclusion",
        }
    }

    pub fn apply(self, mut rules: Rules) -> Rules {
        match self {
            Mutation::DropOwnership => rules.ownership = false,
            Mutation::DropValidityFilter => rules.validity_filter = false,
            Mutation::DropRevocationExclusion => rules.revocation_exclusion = false,
        }
        rules
    }
}

impl FromStr for Mutation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mutation::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ModelError::UnknownMutation(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelToken {
    pub valid: bool,
    pub owner: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRevocationServer {
    /// Index of the server acting as this revocation server.
    pub server: usize,
    pub revoked: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelUniverse {
    pub tokens: Vec<ModelToken>,
    /// Tokens held by each authority.
    pub authorities: Vec<u32>,
    /// Tokens authorized by each server.
    pub servers: Vec<u32>,
    pub revocation_servers: Vec<ModelRevocationServer>,
}

fn bit(mask: u32, i: usize) -> bool {
    mask & (1 << i) != 0
}

impl ModelUniverse {
    fn all_tokens(&self) -> u32 {
        (1u32 << self.tokens.len()) - 1
    }

    fn valid_mask(&self) -> u32 {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.valid)
            .fold(0, |m, (i, _)| m | 1 << i)
    }

    fn revoked_mask(&self) -> u32 {
        self.revocation_servers
            .iter()
            .fold(0, |m, rs| m | rs.revoked)
    }

    fn owned_by(&self, authority: usize) -> u32 {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.owner == authority)
            .fold(0, |m, (i, _)| m | 1 << i)
    }

    /// True if the universe is structurally well formed and satisfies `rules`.
    pub fn satisfies(&self, bounds: &Bounds, rules: Rules) -> bool {
        let (nt, na, ns) = (
            self.tokens.len(),
            self.authorities.len(),
            self.servers.len(),
        );
        if !(1..=bounds.tokens.min(MAX_TOKENS)).contains(&nt)
            || !(1..=bounds.authorities).contains(&na)
            || !(1..=bounds.servers).contains(&ns)
            || self.revocation_servers.len() > bounds.revocation_servers.min(ns)
        {
            return false;
        }
        let all = self.all_tokens();
        let subsets_ok = self
            .authorities
            .iter()
            .chain(&self.servers)
            .all(|m| m & !all == 0)
            && self
                .revocation_servers
                .iter()
                .all(|rs| rs.revoked & !all == 0);
        let owners_ok = self.tokens.iter().all(|t| t.owner < na);
        let rs_ok = self
            .revocation_servers
            .windows(2)
            .all(|w| w[0].server < w[1].server)
            && self.revocation_servers.iter().all(|rs| rs.server < ns);
        if !(subsets_ok && owners_ok && rs_ok) {
            return false;
        }
        if rules.ownership && (0..na).any(|a| self.authorities[a] != self.owned_by(a)) {
            return false;
        }
        let allowed = self.allowed_mask(rules);
        self.servers.iter().all(|s| s & !allowed == 0)
    }

    fn allowed_mask(&self, rules: Rules) -> u32 {
        let mut allowed = self.all_tokens();
        if rules.validity_filter {
            allowed &= self.valid_mask();
        }
        if rules.revocation_exclusion {
            allowed &= !self.revoked_mask();
        }
        allowed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Assertion {
    ValidTokenUsage,
    DetectForgedTokens,
    TokenRevocationMechanism,
}

impl fmt::Display for Assertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Assertion::ValidTokenUsage => "validTokenUsage",
            Assertion::DetectForgedTokens => "detectForgedTokens",
            Assertion::TokenRevocationMechanism => "tokenRevocationMechanism",
        })
    }
}

/// One falsified instance: `assertion` fails for `token`, witnessed by
/// `entity` (an authority or server index).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub universe: u64,
    pub assertion: Assertion,
    pub token: usize,
    pub entity: usize,
}

/// Evaluates the assertions on `u`. `validTokenUsage` is checked against
/// each valid token's owning authority.
pub fn check_assertions(u: &ModelUniverse) -> Vec<(Assertion, usize, usize)> {
    let mut out = Vec::new();
    for (t, token) in u.tokens.iter().enumerate() {
        if token.valid && !bit(u.authorities[token.owner], t) {
            out.push((Assertion::ValidTokenUsage, t, token.owner));
        }
    }
    for (s, authorized) in u.servers.iter().enumerate() {
        for (t, token) in u.tokens.iter().enumerate() {
            if bit(*authorized, t) && !token.valid {
                out.push((Assertion::DetectForgedTokens, t, s));
            }
        }
    }
    let revoked = u.revoked_mask();
    for (s, authorized) in u.servers.iter().enumerate() {
        for t in 0..u.tokens.len() {
            if bit(revoked & authorized, t) {
                out.push((Assertion::TokenRevocationMechanism, t, s));
            }
        }
    }
    out
}

/// `validTokenUsage` quantified over every authority rather than the owner:
/// a valid token must be held by all authorities.
pub fn valid_token_usage_all_authorities(u: &ModelUniverse) -> bool {
    u.tokens
        .iter()
        .enumerate()
        .all(|(t, token)| !token.valid || u.authorities.iter().all(|a| bit(*a, t)))
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exact number of universes the enumerator emits.
///
/// Per token, the choices of validity and membership in each of `k` revoked
/// sets are independent; a token that may be authorized doubles the options
/// of every server. Authorities contribute `na^nt` owner maps, times
/// `2^(nt*na)` free holdings without the ownership rule.
pub fn universe_count(bounds: &Bounds, rules: Rules) -> u128 {
    let mut total = 0u128;
    for nt in 1..=bounds.tokens {
        for na in 1..=bounds.authorities {
            for ns in 1..=bounds.servers {
                for k in 0..=bounds.revocation_servers.min(ns) {
                    let mut owners = (na as u128).pow(nt as u32);
                    if !rules.ownership {
                        owners *= 2u128.pow((nt * na) as u32);
                    }
                    let revocation_choices = 1u128 << k;
                    let allowed_cases = match (rules.validity_filter, rules.revocation_exclusion) {
                        (true, true) => 1,
                        (true, false) => revocation_choices,
                        (false, true) => 2,
                        (false, false) => 2 * revocation_choices,
                    };
                    let per_token =
                        allowed_cases * (1u128 << ns) + (2 * revocation_choices - allowed_cases);
                    total += binomial(ns, k) * owners * per_token.pow(nt as u32);
                }
            }
        }
    }
    total
}

/// Validity, revocation servers and revoked sets: everything a universe
/// fixes before authorities and servers are filled in.
#[derive(Debug, Clone)]
struct Skeleton {
    nt: usize,
    na: usize,
    ns: usize,
    tokens_valid: u32,
    revocation_servers: Vec<ModelRevocationServer>,
}

fn subsets_of_size(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| bit(m, *i)).collect())
        .collect()
}

fn skeletons(bounds: &Bounds) -> Vec<Skeleton> {
    let mut out = Vec::new();
    for nt in 1..=bounds.tokens {
        let token_sets = 1u32 << nt;
        for na in 1..=bounds.authorities {
            for ns in 1..=bounds.servers {
                for k in 0..=bounds.revocation_servers.min(ns) {
                    for rs_servers in subsets_of_size(ns, k) {
                        for tokens_valid in 0..token_sets {
                            let combos = (token_sets as u64).pow(k as u32);
                            for mut code in 0..combos {
                                let revocation_servers = rs_servers
                                    .iter()
                                    .map(|&server| {
                                        let revoked = (code % token_sets as u64) as u32;
                                        code /= token_sets as u64;
                                        ModelRevocationServer { server, revoked }
                                    })
                                    .collect();
                                out.push(Skeleton {
                                    nt,
                                    na,
                                    ns,
                                    tokens_valid,
                                    revocation_servers,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Calls `emit` for every completion of `sk`, in a fixed order.
fn expand(sk: &Skeleton, rules: Rules, emit: &mut dyn FnMut(ModelUniverse)) {
    let token_sets = 1u32 << sk.nt;
    let owner_maps = (sk.na as u64).pow(sk.nt as u32);
    let holdings: u64 = if rules.ownership {
        1
    } else {
        (token_sets as u64).pow(sk.na as u32)
    };
    let mut base = ModelUniverse {
        tokens: Vec::new(),
        authorities: vec![0; sk.na],
        servers: vec![0; sk.ns],
        revocation_servers: sk.revocation_servers.clone(),
    };
    for owner_code in 0..owner_maps {
        let mut code = owner_code;
        base.tokens = (0..sk.nt)
            .map(|t| {
                let owner = (code % sk.na as u64) as usize;
                code /= sk.na as u64;
                ModelToken {
                    valid: bit(sk.tokens_valid, t),
                    owner,
                }
            })
            .collect();
        let allowed = base.allowed_mask(rules);
        let allowed_bits: Vec<usize> = (0..sk.nt).filter(|i| bit(allowed, *i)).collect();
        let server_sets = 1u64 << allowed_bits.len();
        for holding_code in 0..holdings {
            let mut code = holding_code;
            for a in 0..sk.na {
                base.authorities[a] = if rules.ownership {
                    base.owned_by(a)
                } else {
                    let m = (code % token_sets as u64) as u32;
                    code /= token_sets as u64;
                    m
                };
            }
            for server_code in 0..server_sets.pow(sk.ns as u32) {
                let mut code = server_code;
                for s in 0..sk.ns {
                    let pick = code % server_sets;
                    code /= server_sets;
                    base.servers[s] = allowed_bits
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| pick & (1 << j) != 0)
                        .fold(0, |m, (_, t)| m | 1 << t);
                }
                emit(base.clone());
            }
        }
    }
}

/// Every universe within `bounds` satisfying `rules`, each exactly once, in a
/// deterministic order.
pub fn enumerate_universes(
    bounds: &Bounds,
    rules: Rules,
) -> Result<impl Iterator<Item = ModelUniverse>, ModelError> {
    bounds.validate(rules)?;
    Ok(skeletons(bounds).into_iter().flat_map(move |sk| {
        let mut batch = Vec::new();
        expand(&sk, rules, &mut |u| batch.push(u));
        batch
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub bounds: Bounds,
    pub rules: Rules,
    pub universes: u64,
    pub violation_count: u64,
    /// First violations by universe index, capped at [`CheckReport::SAMPLE`].
    pub violations: Vec<Violation>,
    pub counterexample: Option<ModelUniverse>,
    pub elapsed_ms: u128,
}

impl CheckReport {
    pub const SAMPLE: usize = 20;

    pub fn holds(&self) -> bool {
        self.violation_count == 0
    }
}

/// Enumerates and checks every universe in parallel. Results are identical
/// across runs and thread counts.
pub fn check(bounds: &Bounds, rules: Rules) -> Result<CheckReport, ModelError> {
    bounds.validate(rules)?;
    let started = Instant::now();
    let per_skeleton: Vec<SkeletonResult> = skeletons(bounds)
        .par_iter()
        .map(|sk| {
            let mut result = SkeletonResult::default();
            expand(sk, rules, &mut |u| {
                let found = check_assertions(&u);
                if !found.is_empty() && result.first.is_none() {
                    result.first = Some(u);
                }
                for (assertion, token, entity) in found {
                    result.violations += 1;
                    if result.sample.len() < CheckReport::SAMPLE {
                        let universe = result.universes;
                        result.sample.push(Violation {
                            universe,
                            assertion,
                            token,
                            entity,
                        });
                    }
                }
                result.universes += 1;
            });
            result
        })
        .collect();

    let mut report = CheckReport {
        bounds: *bounds,
        rules,
        universes: 0,
        violation_count: 0,
        violations: Vec::new(),
        counterexample: None,
        elapsed_ms: 0,
    };
    for result in per_skeleton {
        for v in result.sample {
            if report.violations.len() < CheckReport::SAMPLE {
                report.violations.push(Violation {
                    universe: report.universes + v.universe,
                    ..v
                });
            }
        }
        if report.counterexample.is_none() {
            report.counterexample = result.first;
        }
        report.universes += result.universes;
        report.violation_count += result.violations;
    }
    report.elapsed_ms = started.elapsed().as_millis();
    Ok(report)
}

#[derive(Default)]
struct SkeletonResult {
    universes: u64,
    violations: u64,
    sample: Vec<Violation>,
    first: Option<ModelUniverse>,
}
