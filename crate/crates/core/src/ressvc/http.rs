//! HTTP front-end for a [`ResourceServer`]. Every path is a resource path.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use tokio::net::TcpListener;

use super::{ResourceRequest, ResourceServer};

pub fn router(server: Arc<ResourceServer>) -> Router {
    Router::new().fallback(handle).with_state(server)
}

pub async fn serve(server: Arc<ResourceServer>, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(server)).await
}

fn absolute_uri(server: &ResourceServer, headers: &HeaderMap, uri: &Uri) -> String {
    let path = uri.path_and_query().map(|p| p.as_str()).unwrap_or("/");
    match server.public_url() {
        Some(origin) => format!("{origin}{path}"),
        None => {
            let host = headers
                .get(header::HOST)
                .and_then(|h| h.to_str().ok())
                .unwrap_or("localhost");
            format!("http://{host}{path}")
        }
    }
}

async fn handle(
    State(server): State<Arc<ResourceServer>>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let header_str = |name: &str| {
        headers
            .get(name)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
    };
    let request = ResourceRequest {
        method: method.as_str().to_string(),
        uri: absolute_uri(&server, &headers, &uri),
        dpop: header_str("dpop"),
        authorization: header_str("authorization"),
        body: body.to_vec(),
    };
    let response = server
        .handle_resource_request(&request, crate::unix_now())
        .await;
    let status = StatusCode::from_u16(response.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let content_type = if response.denial.is_some() || method != Method::GET {
        "application/json"
    } else {
        "application/octet-stream"
    };
    let mut out = (
        status,
        [(header::CONTENT_TYPE, content_type)],
        response.body,
    )
        .into_response();
    if status == StatusCode::UNAUTHORIZED {
        out.headers_mut().insert(
            header::WWW_AUTHENTICATE,
            "DPoP".parse().expect("static header"),
        );
    }
    out
}
