//! HTTP front-end for an [`Authority`].
//!
//! `/admin/*` routes answer only to loopback peers.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{ConnectInfo, State};
use axum::http::{header, HeaderMap, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use super::{AuthError, Authority, OAuthError};

pub fn router(authority: Arc<Authority>) -> Router {
    Router::new()
        .route("/token", any(token))
        .route("/introspect", post(introspect))
        .route("/status-list", get(status_list))
        .route("/jwk", get(jwk))
        .route("/admin/revoke", post(admin_revoke))
        .route("/admin/snapshot", get(admin_snapshot))
        .with_state(authority)
}

/// Serves until the listener fails.
pub async fn serve(authority: Arc<Authority>, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(
        listener,
        router(authority).into_make_service_with_connect_info::<SocketAddr>(),
    )
    .await
}

fn oauth_response(err: OAuthError) -> Response {
    let status = StatusCode::from_u16(err.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(err.body())).into_response()
}

async fn token(State(auth): State<Arc<Authority>>, method: Method, headers: HeaderMap) -> Response {
    let proof = headers.get("dpop").and_then(|v| v.to_str().ok());
    match auth.handle_token_request(method.as_str(), proof, crate::unix_now()) {
        Ok(body) => ([(header::CACHE_CONTROL, "no-store")], Json(body)).into_response(),
        Err(err) => oauth_response(err),
    }
}

#[derive(Deserialize)]
struct IntrospectionBody {
    token: String,
}

fn parse_introspection(headers: &HeaderMap, body: &[u8]) -> Option<String> {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|ct| ct.starts_with("application/json"));
    if is_json {
        return serde_json::from_slice::<IntrospectionBody>(body)
            .ok()
            .map(|b| b.token);
    }
    url::form_urlencoded::parse(body)
        .find(|(key, _)| key == "token")
        .map(|(_, value)| value.into_owned())
}

async fn introspect(
    State(auth): State<Arc<Authority>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    match parse_introspection(&headers, &body) {
        Some(token) => Json(auth.handle_introspection(&token, crate::unix_now())).into_response(),
        None => oauth_response(OAuthError::new(400, "invalid_request", "missing `token`")),
    }
}

async fn status_list(State(auth): State<Arc<Authority>>) -> Response {
    (
        [(header::CONTENT_TYPE, "application/jwt")],
        auth.serve_revocation_list(),
    )
        .into_response()
}

async fn jwk(State(auth): State<Arc<Authority>>) -> Response {
    Json(auth.public_key().clone()).into_response()
}

#[derive(Deserialize)]
struct RevokeBody {
    index: u64,
}

fn forbid_remote(peer: SocketAddr) -> Option<Response> {
    (!peer.ip().is_loopback()).then(|| {
        oauth_response(OAuthError::new(
            403,
            "access_denied",
            "admin routes are loopback-only",
        ))
    })
}

async fn admin_revoke(
    State(auth): State<Arc<Authority>>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    body: Bytes,
) -> Response {
    if let Some(denied) = forbid_remote(peer) {
        return denied;
    }
    let Ok(RevokeBody { index }) = serde_json::from_slice(&body) else {
        return oauth_response(OAuthError::new(
            400,
            "invalid_request",
            "expected {\"index\": n}",
        ));
    };
    match auth.revoke(index) {
        Ok(()) => Json(json!({ "revoked": index })).into_response(),
        Err(err @ AuthError::StatusList(_)) => {
            oauth_response(OAuthError::new(400, "invalid_request", err.to_string()))
        }
        Err(err) => oauth_response(OAuthError::new(500, "server_error", err.to_string())),
    }
}

async fn admin_snapshot(
    State(auth): State<Arc<Authority>>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
) -> Response {
    if let Some(denied) = forbid_remote(peer) {
        return denied;
    }
    Json(auth.snapshot()).into_response()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn introspection_body_formats() {
        let mut json_headers = HeaderMap::new();
        json_headers.insert(header::CONTENT_TYPE, "application/json".parse().unwrap());
        assert_eq!(
            parse_introspection(&json_headers, br#"{"token":"a.b.c"}"#).as_deref(),
            Some("a.b.c")
        );
        assert_eq!(parse_introspection(&json_headers, b"token=a.b.c"), None);
        let form = HeaderMap::new();
        assert_eq!(
            parse_introspection(&form, b"x=1&token=a.b.c").as_deref(),
            Some("a.b.c")
        );
        assert_eq!(parse_introspection(&form, b"x=1"), None);
    }
}
