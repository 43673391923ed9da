//! HTTP API for interactive disclosure sessions.
//!
//! Endpoints: `POST /sessions`, `GET /sessions/{id}`, `POST /sessions/{id}/feature`,
//! `POST /sessions/{id}/whatif`, `GET /health`. Feature values travel raw and
//! are normalized here; responses carry the normalized value.

pub mod api;
pub mod error;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::routing::{get, post};
use axum::Router;

use mindrel_core::artifacts::Artifacts;
use mindrel_core::engine::{EngineConfig, SelectorRegistry};

pub use error::{ApiError, ErrorBody};
pub use store::SessionStore;

pub const DEFAULT_TTL: Duration = Duration::from_secs(30 * 60);

#[derive(Clone)]
pub struct AppState {
    pub artifacts: Arc<Artifacts>,
    pub registry: SelectorRegistry,
    /// Used when a create request omits `delta` or `selector`.
    pub defaults: EngineConfig,
    pub store: Arc<SessionStore>,
    names: Arc<[String]>,
}

impl AppState {
    pub fn new(artifacts: Artifacts, defaults: EngineConfig, ttl: Duration) -> mindrel_core::Result<Self> {
        let registry = SelectorRegistry::builtin();
        // fail at startup rather than on the first request
        artifacts.engine(defaults.clone(), &registry)?;
        Ok(Self {
            names: artifacts.feature_names().into(),
            artifacts: Arc::new(artifacts),
            registry,
            defaults,
            store: Arc::new(SessionStore::new(ttl)),
        })
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(api::health))
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}", get(api::get_session))
        .route("/sessions/{id}/feature", post(api::submit_feature))
        .route("/sessions/{id}/whatif", post(api::whatif))
        .with_state(state)
}

/// Serves until the process is stopped, sweeping expired sessions once a minute.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let store = state.store.clone();
    let period = store.ttl().min(Duration::from_secs(60)).max(Duration::from_millis(10));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let n = store.sweep();
            if n > 0 {
                log::debug!("evicted {n} idle sessions");
            }
        }
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
