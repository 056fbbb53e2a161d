mod common;

use capvc::authsvc::{AccessTokenClaims, Authority, AuthorityConfig, ACCESS_TOKEN_TYP};
use capvc::capmodel::{AccessTable, CapabilitySet, Operation};
use capvc::client::{self, PresentationClaims, PRESENTATION_TYP};
use capvc::dpop;
use capvc::jose::{self, SignedEnvelope};
use capvc::ressvc::{Decision, ResourceRequest, RevocationMode, Stage};
use capvc::unix_now;
use common::{block_on, key, World, DRONE1_URL, STORAGE_ORIGIN};
use serde_json::{json, Map, Value};

fn stage_of(resp: &capvc::ressvc::ResourceResponse) -> Option<Stage> {
    resp.denial.as_ref().map(|d| d.stage)
}

#[test]
fn listing2_read_write_and_read_only_tenant() {
    let w = World::standard();
    let now = unix_now();
    let t1 = w.token(&w.drone1, &w.bma, now);
    let t2 = w.token(&w.drone2, &w.bma, now);

    let put = w.send("PUT", "/data/drone1/f", &t1, &w.bma, now);
    assert_eq!(put.status, 200, "{:?}", put.denial);
    let get = w.send("GET", "/data/drone1/f", &t1, &w.bma, now);
    assert_eq!((get.status, get.body.as_slice()), (200, &b"payload"[..]));

    let denied = w.send("PUT", "/data/drone2/x", &t2, &w.bma, now);
    assert_eq!(denied.status, 403);
    assert_eq!(denied.denial.unwrap().error, "insufficient_capabilities");
    let missing = w.send("GET", "/data/drone2/x", &t2, &w.bma, now);
    assert_eq!(
        (missing.status, stage_of(&missing)),
        (404, Some(Stage::Storage))
    );
}

#[test]
fn each_stage_reports_itself_and_storage_is_untouched() {
    let w = World::standard();
    let now = unix_now();
    let t1 = w.token(&w.drone1, &w.bma, now);
    let t2 = w.token(&w.drone2, &w.bma, now);
    let stranger = key("stranger");
    let forger = key("forger");

    let mut cases: Vec<(Stage, ResourceRequest)> = Vec::new();
    let uri = format!("{STORAGE_ORIGIN}/data/drone1/f");

    let proof = dpop::create_proof(&w.bma, "GET", &uri, now).unwrap();
    let mut patch = ResourceRequest::new("PATCH", &uri).with_credentials(&t1, &proof);
    patch.method = "PATCH".into();
    cases.push((Stage::Path, patch));
    cases.push((
        Stage::Authority,
        w.request("PUT", "/data/drone3/f", &t1, &w.bma, now),
    ));
    cases.push((
        Stage::Authority,
        w.request("PUT", "/data/drone12", &t1, &w.bma, now),
    ));

    let mut no_proof = w.request("PUT", "/data/drone1/f", &t1, &w.bma, now);
    no_proof.dpop = None;
    cases.push((Stage::Dpop, no_proof));
    let token_proof = dpop::create_proof(&w.bma, "POST", &w.drone1.token_endpoint(), now).unwrap();
    cases.push((
        Stage::Dpop,
        ResourceRequest::new("PUT", &uri).with_credentials(&t1, &token_proof),
    ));
    let stale = dpop::create_proof(&w.bma, "PUT", &uri, now - 301).unwrap();
    cases.push((
        Stage::Dpop,
        ResourceRequest::new("PUT", &uri).with_credentials(&t1, &stale),
    ));

    let mut no_auth = w.request("PUT", "/data/drone1/f", &t1, &w.bma, now);
    no_auth.authorization = None;
    cases.push((Stage::TokenDecode, no_auth));
    let mut bearer = w.request("PUT", "/data/drone1/f", &t1, &w.bma, now);
    bearer.authorization = Some(format!("Bearer {t1}"));
    cases.push((Stage::TokenDecode, bearer));
    cases.push((
        Stage::TokenDecode,
        w.request("PUT", "/data/drone1/f", "x.y.z", &w.bma, now),
    ));

    cases.push((
        Stage::Issuer,
        w.request("PUT", "/data/drone1/f", &t2, &w.bma, now),
    ));

    let impostor = Authority::new(
        AuthorityConfig::new(DRONE1_URL, AccessTable::new()),
        forger.clone(),
    )
    .unwrap();
    let forged = impostor
        .issue_access_token(w.bma.public(), &capvc::capmodel::sample_capabilities(), now)
        .unwrap();
    cases.push((
        Stage::Signature,
        w.request("PUT", "/data/drone1/f", &forged, &w.bma, now),
    ));

    let theirs = w
        .drone1
        .issue_access_token(
            stranger.public(),
            &capvc::capmodel::sample_capabilities(),
            now,
        )
        .unwrap();
    cases.push((
        Stage::KeyBinding,
        w.request("PUT", "/data/drone1/f", &theirs, &w.bma, now),
    ));

    let old = w.token(&w.drone1, &w.bma, now - 3600);
    cases.push((
        Stage::Expiry,
        w.request("PUT", "/data/drone1/f", &old, &w.bma, now),
    ));

    let revoked = w.token(&w.drone1, &w.bma, now);
    let index = capvc::authsvc::peek_access_token(&revoked)
        .unwrap()
        .status()
        .revocation_list_index;
    w.drone1.revoke(index).unwrap();
    cases.push((
        Stage::Revocation,
        w.request("PUT", "/data/drone1/f", &revoked, &w.bma, now),
    ));

    cases.push((
        Stage::Capability,
        w.request("PUT", "/data/drone2/f", &t2, &w.bma, now),
    ));

    for (expected, req) in &cases {
        let resp = block_on(w.server.handle_resource_request(req, now));
        assert_eq!(
            stage_of(&resp),
            Some(*expected),
            "{} {}: {:?}",
            req.method,
            req.uri,
            resp.denial
        );
    }
    let probe = w.send("GET", "/data/drone1/f", &t1, &w.bma, now);
    assert_eq!(
        stage_of(&probe),
        Some(Stage::Storage),
        "a denied request reached storage"
    );

    let records = w.server.audit_log().records();
    assert_eq!(records.len(), cases.len() + 1);
    assert!(records.iter().all(|r| r.decision == Decision::Deny));
    for (record, (expected, _)) in records.iter().zip(&cases) {
        assert_eq!(record.stage, Some(*expected));
    }
}

#[test]
fn captured_proof_replays_are_refused() {
    let w = World::standard();
    let now = unix_now();
    let t1 = w.token(&w.drone1, &w.bma, now);
    let req = w.request("GET", "/data/drone1/f", &t1, &w.bma, now);
    block_on(w.server.handle_resource_request(&req, now));
    let again = block_on(w.server.handle_resource_request(&req, now + 1));
    assert_eq!(again.status, 401);
    assert_eq!(again.denial.unwrap().error, "invalid_dpop");
}

#[test]
fn status_list_is_fetched_once_per_max_age() {
    let w = World::new(RevocationMode::StatusList, 60);
    let now = unix_now();
    let tokens: Vec<String> = (0..20).map(|_| w.token(&w.drone1, &w.bma, now)).collect();
    for (i, token) in tokens.iter().enumerate() {
        let resp = w.send(
            "PUT",
            &format!("/data/drone1/{i}"),
            token,
            &w.bma,
            now + (i as i64 % 30),
        );
        assert_eq!(resp.status, 200);
    }
    assert_eq!(w.authorities.status_fetches(), 1);

    let index = capvc::authsvc::peek_access_token(&tokens[0])
        .unwrap()
        .status()
        .revocation_list_index;
    w.drone1.revoke(index).unwrap();
    // Cached list still shows the token active until max-age elapses.
    assert_eq!(
        w.send("GET", "/data/drone1/0", &tokens[0], &w.bma, now + 59)
            .status,
        200
    );
    let after = w.send("GET", "/data/drone1/0", &tokens[0], &w.bma, now + 60);
    assert_eq!(
        (after.status, stage_of(&after)),
        (401, Some(Stage::Revocation))
    );
    assert_eq!(w.authorities.status_fetches(), 2);
    assert_eq!(
        w.send("GET", "/data/drone1/1", &tokens[1], &w.bma, now + 61)
            .status,
        200
    );
}

#[test]
fn introspection_sees_revocation_immediately() {
    let w = World::new(RevocationMode::Introspection, 60);
    let now = unix_now();
    let t1 = w.token(&w.drone1, &w.bma, now);
    assert_eq!(
        w.send("PUT", "/data/drone1/f", &t1, &w.bma, now).status,
        200
    );
    let index = capvc::authsvc::peek_access_token(&t1)
        .unwrap()
        .status()
        .revocation_list_index;
    w.drone1.revoke(index).unwrap();
    let resp = w.send("GET", "/data/drone1/f", &t1, &w.bma, now);
    assert_eq!(resp.denial.unwrap().error, "revoked_token");
    assert_eq!(w.authorities.introspections(), 2);
}

#[test]
fn unreachable_issuer_fails_closed_in_both_modes() {
    for mode in [RevocationMode::Introspection, RevocationMode::StatusList] {
        let w = World::new(mode, 60);
        let now = unix_now();
        let t1 = w.token(&w.drone1, &w.bma, now);
        w.authorities.set_offline(DRONE1_URL, true);
        let resp = w.send("PUT", "/data/drone1/f", &t1, &w.bma, now);
        assert_eq!(stage_of(&resp), Some(Stage::Revocation), "{mode:?}");
        w.authorities.set_offline(DRONE1_URL, false);
        assert_eq!(
            w.send("PUT", "/data/drone1/f", &t1, &w.bma, now).status,
            200,
            "{mode:?}"
        );
    }
}

fn sign_presentation(
    tokens: Vec<String>,
    signer: &capvc::jose::KeyPair,
    iss: String,
    now: i64,
) -> String {
    let mut header = Map::new();
    header.insert("typ".into(), PRESENTATION_TYP.into());
    let claims = PresentationClaims {
        iss,
        vp: tokens,
        iat: now,
    };
    jose::sign_serializable(header, &claims, signer)
        .unwrap()
        .compact
}

#[test]
fn presentation_grants_union_and_is_all_or_nothing() {
    let w = World::standard();
    let now = unix_now();
    let t1 = w.token(&w.drone1, &w.bma, now);
    let t2 = w.token(&w.drone2, &w.bma, now);
    let vp = client::combine_presentation(&[t1.clone(), t2.clone()], &w.bma, now).unwrap();

    let union = block_on(w.server.verify_presentation(&vp, w.bma.public(), now)).unwrap();
    let c1 = capvc::authsvc::peek_access_token(&t1).unwrap();
    let c2 = capvc::authsvc::peek_access_token(&t2).unwrap();
    assert_eq!(
        union,
        CapabilitySet::union([c1.capabilities().clone(), c2.capabilities().clone()])
    );

    assert_eq!(
        w.send("GET", "/data/drone1/f", &vp, &w.bma, now).status,
        404
    );
    assert_eq!(
        w.send("GET", "/data/drone2/f", &vp, &w.bma, now).status,
        404
    );
    assert_eq!(
        w.send("PUT", "/data/drone1/f", &vp, &w.bma, now).status,
        200
    );
    assert_eq!(
        w.send("PUT", "/data/drone2/f", &vp, &w.bma, now).status,
        403
    );

    let stranger = key("stranger");
    let foreign = w
        .drone2
        .issue_access_token(
            stranger.public(),
            &capvc::capmodel::sample_capabilities(),
            now,
        )
        .unwrap();
    let mixed = sign_presentation(vec![t1.clone(), foreign], &w.bma, w.bma.thumbprint(), now);
    let resp = w.send("GET", "/data/drone1/f", &mixed, &w.bma, now);
    assert_eq!(stage_of(&resp), Some(Stage::KeyBinding));
    assert!(block_on(w.server.verify_presentation(&mixed, w.bma.public(), now)).is_err());

    let empty = sign_presentation(Vec::new(), &w.bma, w.bma.thumbprint(), now);
    assert!(
        block_on(w.server.verify_presentation(&empty, w.bma.public(), now))
            .unwrap()
            .is_empty()
    );
    assert_eq!(
        stage_of(&w.send("GET", "/data/drone1/f", &empty, &w.bma, now)),
        Some(Stage::Capability)
    );

    let wrong_iss = sign_presentation(vec![t1.clone()], &w.bma, stranger.thumbprint(), now);
    assert_eq!(
        stage_of(&w.send("GET", "/data/drone1/f", &wrong_iss, &w.bma, now)),
        Some(Stage::Issuer)
    );
    // Presented by someone else: their DPoP key is not the presentation signer.
    let stolen = w.send("GET", "/data/drone1/f", &vp, &stranger, now);
    assert_eq!(stage_of(&stolen), Some(Stage::Issuer));
}

#[test]
fn presentation_credentials_only_count_for_their_own_tenant() {
    let w = World::standard();
    let now = unix_now();
    // drone2's authority hands out a grant on drone1's data.
    let overreach = CapabilitySet::from_pairs([("/data", &Operation::ALL[..])]).unwrap();
    let t2 = w
        .drone2
        .issue_access_token(w.bma.public(), &overreach, now)
        .unwrap();
    let vp = client::combine_presentation(std::slice::from_ref(&t2), &w.bma, now).unwrap();
    assert_eq!(
        stage_of(&w.send("PUT", "/data/drone1/f", &vp, &w.bma, now)),
        Some(Stage::Capability)
    );
    assert_eq!(
        stage_of(&w.send("PUT", "/data/drone1/f", &t2, &w.bma, now)),
        Some(Stage::Issuer)
    );
    assert_eq!(
        w.send("PUT", "/data/drone2/f", &vp, &w.bma, now).status,
        200
    );
}

#[test]
fn delegated_token_is_attenuated_and_bound_to_delegatee() {
    let w = World::standard();
    let now = unix_now();
    let helper = key("helper");
    let t1 = w.token(&w.drone1, &w.bma, now);
    let t2 = w.token(&w.drone2, &w.bma, now);
    let read1 = CapabilitySet::from_pairs([("/data/drone1", &[Operation::Read][..])]).unwrap();
    let d1 = client::delegate(&t1, helper.public(), &read1, &w.bma, 600, now).unwrap();

    assert_eq!(
        w.send("PUT", "/data/drone1/f", &t1, &w.bma, now).status,
        200
    );
    assert_eq!(
        w.send("GET", "/data/drone1/f", &d1, &helper, now).status,
        200
    );
    let write = w.send("PUT", "/data/drone1/f", &d1, &helper, now);
    assert_eq!(stage_of(&write), Some(Stage::Capability));
    assert_eq!(
        stage_of(&w.send("GET", "/data/drone1/f", &d1, &w.bma, now)),
        Some(Stage::KeyBinding)
    );
    assert_eq!(
        stage_of(&w.send("PUT", "/data/drone2/f", &d1, &helper, now)),
        Some(Stage::Issuer)
    );
    let read2 = CapabilitySet::from_pairs([("/data/drone2", &[Operation::Read][..])]).unwrap();
    let d2 = client::delegate(&t2, helper.public(), &read2, &w.bma, 600, now).unwrap();
    assert_eq!(
        stage_of(&w.send("PUT", "/data/drone2/f", &d2, &helper, now)),
        Some(Stage::Capability)
    );
    assert_eq!(
        stage_of(&w.send("GET", "/data/drone2/f", &d2, &helper, now)),
        Some(Stage::Storage)
    );

    // Revoking the root token kills every delegation below it.
    let index = capvc::authsvc::peek_access_token(&t1)
        .unwrap()
        .status()
        .revocation_list_index;
    w.drone1.revoke(index).unwrap();
    let later = now + 61;
    assert_eq!(
        stage_of(&w.send("GET", "/data/drone1/f", &d1, &helper, later)),
        Some(Stage::Revocation)
    );
}

#[test]
fn delegation_chain_depth_is_capped() {
    let w = World::standard();
    let now = unix_now();
    let read1 = CapabilitySet::from_pairs([("/data/drone1", &[Operation::Read][..])]).unwrap();
    let mut token = w.token(&w.drone1, &w.bma, now);
    let mut holder = w.bma.clone();
    for depth in 1..=5 {
        let next = key(&format!("hop{depth}"));
        token = client::delegate(&token, next.public(), &read1, &holder, 600, now).unwrap();
        holder = next;
        let resp = w.send("GET", "/data/drone1/f", &token, &holder, now);
        let expected = if depth <= 4 {
            Some(Stage::Storage)
        } else {
            Some(Stage::TokenDecode)
        };
        assert_eq!(stage_of(&resp), expected, "depth {depth}");
    }
}

#[test]
fn forged_delegation_signature_is_rejected() {
    let w = World::standard();
    let now = unix_now();
    let t1 = w.token(&w.drone1, &w.bma, now);
    let thief = key("thief");
    let read1 = CapabilitySet::from_pairs([("/data/drone1", &[Operation::Read][..])]).unwrap();
    // Thief wraps the stolen token in a delegation to itself, signed with its own key.
    let mut header = Map::new();
    header.insert("typ".into(), capvc::client::DELEGATION_TYP.into());
    let claims = json!({
        "iss": w.bma.thumbprint(),
        "cnf": {"jwk": thief.public()},
        "parent": t1,
        "att": read1,
        "iat": now,
        "exp": now + 60,
        "jti": "stolen-delegation-0001",
    });
    let Value::Object(claims) = claims else {
        unreachable!()
    };
    let forged = jose::sign_envelope(header, claims, &thief).unwrap().compact;
    assert_eq!(
        stage_of(&w.send("GET", "/data/drone1/f", &forged, &thief, now)),
        Some(Stage::Signature)
    );
}

#[test]
fn tampered_capabilities_break_the_signature() {
    let w = World::standard();
    let now = unix_now();
    let t2 = w.token(&w.drone2, &w.bma, now);
    let env = SignedEnvelope::decode_unverified(&t2).unwrap();
    let mut claims: AccessTokenClaims = serde_json::from_value(Value::Object(env.claims)).unwrap();
    claims.vc.credential_subject.capabilities =
        CapabilitySet::from_pairs([("/data/drone2", &Operation::ALL[..])]).unwrap();
    let forged_claims = jose::b64url_encode(serde_json::to_vec(&claims).unwrap());
    let parts: Vec<&str> = t2.split('.').collect();
    let spliced = format!("{}.{}.{}", parts[0], forged_claims, parts[2]);
    assert_eq!(env.header["typ"], ACCESS_TOKEN_TYP);
    assert_eq!(
        stage_of(&w.send("PUT", "/data/drone2/f", &spliced, &w.bma, now)),
        Some(Stage::Signature)
    );
}
