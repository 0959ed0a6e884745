use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use ssgov_core::protocol::codes;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::service::{Reply, Service};

/// Routes every request through [`Service::handle`]. Unknown paths and
/// wrong methods are answered by the service too, so every connection gets
/// one signed body.
pub fn router(service: Arc<Service>) -> Router {
    Router::new().fallback(dispatch).with_state(service)
}

async fn dispatch(State(service): State<Arc<Service>>, method: Method, uri: Uri, body: Body) -> Response {
    let path = uri.path().to_string();
    let bytes = match to_bytes(body, service.max_body_bytes()).await {
        Ok(b) => b,
        Err(e) => {
            tracing::warn!(path, error = %e, "request body rejected");
            let msg = format!("body unreadable or larger than {} bytes", service.max_body_bytes());
            return into_response(service.protocol_error(413, "PAYLOAD_TOO_LARGE", &msg, &path));
        }
    };
    let worker = service.clone();
    let worker_path = path.clone();
    let reply = tokio::task::spawn_blocking(move || worker.handle(method.as_str(), &worker_path, &bytes)).await;
    match reply {
        Ok(reply) => into_response(reply),
        Err(e) => {
            tracing::error!(path, error = %e, "handler crashed");
            into_response(service.protocol_error(500, codes::INTERNAL, "internal error", &path))
        }
    }
}

fn into_response(reply: Reply) -> Response {
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let mut resp = (status, reply.body).into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    // request, response, disconnect
    headers.insert(header::CONNECTION, HeaderValue::from_static("close"));
    resp
}

/// Runs notification cycles every `cycle_secs` on the blocking pool.
pub fn spawn_scheduler(service: Arc<Service>) -> JoinHandle<()> {
    let every = Duration::from_secs(service.config().notify.cycle_secs.max(1));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            let s = service.clone();
            match tokio::task::spawn_blocking(move || s.run_cycle()).await {
                Ok(Ok(notices)) if !notices.is_empty() => tracing::info!(count = notices.len(), "notification cycle"),
                Ok(Ok(_)) => {}
                Ok(Err(e)) => tracing::error!(error = %e, "notification cycle failed"),
                Err(e) => tracing::error!(error = %e, "notification cycle crashed"),
            }
        }
    })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    service: Arc<Service>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
}
