use std::collections::HashSet;

use capvc::authsvc::{decode_status_list, peek_access_token, Authority, AuthorityConfig};
use capvc::capmodel::{
    AccessTable, Capability, CapabilitySet, Operation, ResourcePath, Thumbprint,
};
use capvc::dpop::{
    create_proof, verify_proof, DpopError, FreshnessWindow, ReplayCache, ALLOWED_METHODS,
};
use capvc::jose::{b64url_decode, b64url_encode, verify_envelope, KeyPair, SignatureAlgorithm};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const NOW: i64 = 1_750_000_000;

fn key(seed: &str) -> KeyPair {
    KeyPair::generate(SignatureAlgorithm::EdDsa, Some(seed.as_bytes())).unwrap()
}

fn cache() -> ReplayCache {
    ReplayCache::new(FreshnessWindow::default(), 10_000)
}

#[test]
fn mismatch_matrix_accepts_only_the_exact_request() {
    let key = key("prover");
    let uris = [
        "https://storage.example/data/drone1/f",
        "https://storage.example/data/drone1/g",
        "https://storage.example:8443/data/drone1/f",
        "http://storage.example/data/drone1/f",
        "https://drone1-operator.example/token",
    ];
    // Offsets of iat from the verifier clock; the window is [-300, +30].
    let offsets = [
        (-301, false),
        (-300, true),
        (0, true),
        (30, true),
        (31, false),
    ];
    let (mut accepted, mut total) = (0, 0);
    for proof_method in ALLOWED_METHODS {
        for proof_uri in uris {
            for (offset, fresh) in offsets {
                for replayed in [false, true] {
                    let proof = create_proof(&key, proof_method, proof_uri, NOW + offset).unwrap();
                    for method in ALLOWED_METHODS {
                        for uri in uris {
                            let cache = cache();
                            if replayed {
                                verify_proof(&proof, proof_method, proof_uri, NOW + offset, &cache)
                                    .unwrap();
                            }
                            let expected =
                                method == proof_method && uri == proof_uri && fresh && !replayed;
                            let result = verify_proof(&proof, method, uri, NOW, &cache);
                            assert_eq!(
                                result.is_ok(),
                                expected,
                                "{proof_method} {proof_uri} iat{offset:+} replayed={replayed} vs {method} {uri}: {result:?}"
                            );
                            total += 1;
                            accepted += usize::from(expected);
                        }
                    }
                }
            }
        }
    }
    assert_eq!(total, 4 * 5 * 5 * 2 * 4 * 5);
    assert_eq!(accepted, 4 * 5 * 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn each_proof_is_accepted_exactly_once(n in 1usize..12, seed in any::<u64>()) {
        let key = key("prover");
        let uri = "https://storage.example/data/drone1/f";
        let proofs: Vec<String> =
            (0..n).map(|_| create_proof(&key, "GET", uri, NOW).unwrap()).collect();
        let mut schedule: Vec<usize> = (0..n).flat_map(|i| [i, i, i]).collect();
        schedule.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cache = cache();
        let mut seen = HashSet::new();
        for i in schedule {
            let result = verify_proof(&proofs[i], "GET", uri, NOW, &cache);
            if seen.insert(i) {
                prop_assert!(result.is_ok());
            } else {
                prop_assert_eq!(result.unwrap_err(), DpopError::ReplayedJti);
            }
        }
    }

    #[test]
    fn returned_key_is_the_signing_key(seed in any::<u64>(), other_seed in any::<u64>()) {
        prop_assume!(seed != other_seed);
        let signer = key(&seed.to_string());
        let other = key(&other_seed.to_string());
        let uri = "https://storage.example/x";
        let proof = create_proof(&signer, "PUT", uri, NOW).unwrap();
        let jwk = verify_proof(&proof, "PUT", uri, NOW, &cache()).unwrap();
        prop_assert_eq!(&jwk, signer.public());
        prop_assert!(verify_envelope(&proof, &jwk).is_ok());

        // Swapping the header key for another makes the proof speak for nobody.
        let segments: Vec<&str> = proof.split('.').collect();
        let mut header: serde_json::Value =
            serde_json::from_slice(&b64url_decode(segments[0]).unwrap()).unwrap();
        header["jwk"] = serde_json::to_value(other.public()).unwrap();
        let forged = format!(
            "{}.{}.{}",
            b64url_encode(serde_json::to_vec(&header).unwrap()),
            segments[1],
            segments[2]
        );
        prop_assert_eq!(
            verify_proof(&forged, "PUT", uri, NOW, &cache()).unwrap_err(),
            DpopError::BadSignature
        );
    }
}

fn cap_set() -> impl Strategy<Value = CapabilitySet> {
    let path = prop::collection::vec(
        prop::sample::select(vec!["data", "drone1", "drone2", "x"]),
        0..3,
    )
    .prop_map(|segs| ResourcePath::parse(&format!("/{}", segs.join("/"))).unwrap());
    let ops = prop::sample::subsequence(vec![Operation::Read, Operation::Write], 1..=2);
    prop::collection::vec((path, ops), 1..4).prop_map(|entries| {
        let mut set = CapabilitySet::new();
        for (p, o) in entries {
            set.merge(Capability::new(p, o).unwrap());
        }
        set
    })
}

const AUTH_URL: &str = "https://drone1-operator.example";

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn issued_tokens_carry_exactly_the_table_entry(tables in prop::collection::vec(cap_set(), 1..5)) {
        let clients: Vec<KeyPair> = (0..tables.len()).map(|i| key(&format!("client{i}"))).collect();
        let mut access = AccessTable::new();
        for (client, caps) in clients.iter().zip(&tables) {
            access.grant(Thumbprint::of(client.public()), caps.clone());
        }
        let authority = Authority::new(AuthorityConfig::new(AUTH_URL, access), key("auth")).unwrap();
        let mut indices = HashSet::new();
        for (round, _) in [(); 3].iter().enumerate() {
            for (client, caps) in clients.iter().zip(&tables) {
                let now = NOW + round as i64;
                let proof = create_proof(client, "POST", &authority.token_endpoint(), now).unwrap();
                let token = authority.handle_token_request("POST", Some(&proof), now).unwrap().access_token;
                prop_assert!(verify_envelope(&token, authority.public_key()).is_ok());
                let claims = peek_access_token(&token).unwrap();
                prop_assert_eq!(claims.capabilities(), caps);
                prop_assert_eq!(&claims.cnf.jwk, client.public());
                prop_assert!(indices.insert(claims.status().revocation_list_index));
            }
        }
        prop_assert_eq!(indices.len(), authority.issued_count());
    }

    #[test]
    fn revocation_is_never_undone(ops in prop::collection::vec((0usize..6, any::<bool>()), 1..40)) {
        let client = key("client");
        let mut access = AccessTable::new();
        access.grant(Thumbprint::of(client.public()), capvc::capmodel::sample_capabilities());
        let authority = Authority::new(AuthorityConfig::new(AUTH_URL, access), key("auth")).unwrap();
        let tokens: Vec<String> = (0..6)
            .map(|_| authority.issue_access_token(client.public(), &capvc::capmodel::sample_capabilities(), NOW).unwrap())
            .collect();
        let mut revoked = HashSet::new();
        for (step, (i, revoke)) in ops.into_iter().enumerate() {
            let index = peek_access_token(&tokens[i]).unwrap().status().revocation_list_index;
            if revoke {
                authority.revoke(index).unwrap();
                revoked.insert(i);
            }
            let now = NOW + step as i64;
            let list = decode_status_list(&authority.serve_revocation_list(), AUTH_URL, authority.public_key()).unwrap();
            for (j, token) in tokens.iter().enumerate() {
                let active = authority.handle_introspection(token, now).active;
                prop_assert_eq!(active, !revoked.contains(&j));
                let index = peek_access_token(token).unwrap().status().revocation_list_index;
                prop_assert_eq!(list.get(index), revoked.contains(&j));
            }
        }
    }
}

#[test]
fn proofs_for_other_uris_never_yield_a_token() {
    let client = key("client");
    let mut access = AccessTable::new();
    access.grant(
        Thumbprint::of(client.public()),
        capvc::capmodel::sample_capabilities(),
    );
    let authority = Authority::new(AuthorityConfig::new(AUTH_URL, access), key("auth")).unwrap();
    let targets = [
        "https://drone1-operator.example/introspect",
        "https://drone1-operator.example/token/extra",
        "https://drone2-operator.example/token",
        "http://drone1-operator.example/token",
        "https://drone1-operator.example:444/token",
        "https://storage.example/data/drone1/f",
    ];
    for method in ALLOWED_METHODS {
        for target in targets {
            let proof = create_proof(&client, method, target, NOW).unwrap();
            let err = authority
                .handle_token_request("POST", Some(&proof), NOW)
                .unwrap_err();
            assert_eq!(err.status, 400, "{method} {target}");
        }
        let proof = create_proof(&client, method, &authority.token_endpoint(), NOW).unwrap();
        assert_eq!(
            authority
                .handle_token_request("POST", Some(&proof), NOW)
                .is_ok(),
            method == "POST"
        );
    }
    assert_eq!(authority.issued_count(), 1);
}
