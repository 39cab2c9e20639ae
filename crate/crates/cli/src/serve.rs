//! `mock-serve`: hosts in-process mocks behind the tvseg/1 HTTP protocol.

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;

use tvseg_core::backends::service::WireService;
use tvseg_core::backends::wire::{CHAT_PATH, DETECT_PATH, SEGMENT_AUTO_PATH, SEGMENT_PATH};
use tvseg_core::backends::{BackendConfig, Endpoint};
use tvseg_core::config::{Overrides, RunConfig};

use crate::Failure;

const BODY_LIMIT: usize = 256 * 1024 * 1024;

async fn handle(State(svc): State<Arc<WireService>>, uri: Uri, body: Bytes) -> Response {
    let path = uri.path().to_string();
    let route = path.clone();
    let reply = tokio::task::spawn_blocking(move || svc.handle(&route, &body)).await;
    let reply = match reply {
        Ok(r) => r,
        Err(e) => tvseg_core::backends::service::Reply::error(500, "internal", e.to_string()),
    };
    tracing::info!(%path, status = reply.status, bytes = reply.body.len(), "request");
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], reply.body).into_response()
}

fn router(svc: WireService) -> Router {
    Router::new()
        .route(CHAT_PATH, post(handle))
        .route(DETECT_PATH, post(handle))
        .route(SEGMENT_PATH, post(handle))
        .route(SEGMENT_AUTO_PATH, post(handle))
        .fallback(handle)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(Arc::new(svc))
}

async fn shutdown_signal() {
    let interrupt = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = interrupt => {},
        _ = terminate => {},
    }
    tracing::info!("shutting down after in-flight requests");
}

fn mock_only(role: &str, cfg: &Option<BackendConfig>) -> Result<(), Failure> {
    if let Some(c) = cfg {
        if !matches!(Endpoint::parse(&c.endpoint), Ok(Endpoint::Mock(_))) {
            return Err(Failure::config(anyhow!(
                "backends.{role}: mock-serve only hosts mock endpoints, got '{}'",
                c.endpoint
            )));
        }
    }
    Ok(())
}

pub fn cmd_mock_serve(path: &Path, host: &str, port: u16) -> Result<(), Failure> {
    let cfg = RunConfig::load(path, Overrides::default()).map_err(Failure::config)?;
    let b = &cfg.backends;
    mock_only("chat", &b.chat)?;
    mock_only("detector", &b.detector)?;
    mock_only("segmenter", &b.segmenter)?;
    mock_only("auto", &b.auto)?;
    let prepared = cfg.prepare().map_err(Failure::config)?;
    let backends = prepared.pipeline.backends;
    let svc = WireService {
        chat: backends.chat,
        detector: backends.detector,
        auto: backends.auto.or_else(|| backends.segmenter.clone()),
        segmenter: backends.segmenter,
    };

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
        .map_err(Failure::runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("binding {host}:{port}"))?;
        let addr = listener.local_addr()?;
        // always printed, whatever the log level; wrappers wait for this line
        eprintln!("listening on {addr}");
        axum::serve(listener, router(svc))
            .with_graceful_shutdown(shutdown_signal())
            .await
            .context("serving")
    })
    .map_err(Failure::runtime)
}
