//! HTTP API over loaded trace corpora.
//!
//! Each session pairs a corpus with a stack of rule-set snapshots; rules can
//! be previewed, applied and undone, and extraction runs against the current
//! snapshot. Mutations on one session are serialized: a request that finds
//! another mutation in flight gets `409 Conflict`.

pub mod api;
pub mod session;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::http::{HeaderValue, Method};
use axum::routing::{get, post};
use axum::Router;
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;
use tracefold_core::trace::{ingest_corpus, TraceCorpus};
use tracefold_core::{Error, Result};

use crate::session::Session;

pub struct AppState {
    pub corpora: BTreeMap<String, Arc<TraceCorpus>>,
    pub sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn new(corpora: BTreeMap<String, Arc<TraceCorpus>>) -> Self {
        AppState {
            corpora,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().expect("session table").get(id).cloned()
    }
}

/// Loads each file as a corpus labelled by its file stem.
pub fn load_corpora(paths: &[PathBuf]) -> Result<BTreeMap<String, Arc<TraceCorpus>>> {
    let mut out = BTreeMap::new();
    for path in paths {
        let label = corpus_label(path);
        let corpus = ingest_corpus(path)?;
        if out.insert(label.clone(), Arc::new(corpus)).is_some() {
            return Err(Error::Config(format!("two corpora share the label {label:?}")));
        }
    }
    Ok(out)
}

pub fn corpus_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Allowed browser origins; empty allows any origin.
    pub cors_origins: Vec<String>,
    /// Directory served for paths outside the API.
    pub static_dir: Option<PathBuf>,
}

fn cors(origins: &[String]) -> Result<CorsLayer> {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::DELETE])
        .allow_headers(Any);
    if origins.is_empty() {
        return Ok(layer.allow_origin(Any));
    }
    let parsed = origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| Error::Config(format!("bad CORS origin {o:?}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(layer.allow_origin(parsed))
}

pub fn router(state: Arc<AppState>, config: &ServerConfig) -> Result<Router> {
    let api = Router::new()
        .route("/health", get(api::health))
        .route("/corpora", get(api::corpora))
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}", get(api::get_session).delete(api::delete_session))
        .route("/sessions/{id}/graph", get(api::graph))
        .route("/sessions/{id}/stats", get(api::stats))
        .route("/sessions/{id}/rules", get(api::rules))
        .route("/sessions/{id}/curve", get(api::curve))
        .route("/sessions/{id}/rules/preview", post(api::preview))
        .route("/sessions/{id}/rules/apply", post(api::apply))
        .route("/sessions/{id}/undo", post(api::undo))
        .route("/sessions/{id}/extract", post(api::extract))
        .route("/sessions/{id}/estimate", post(api::estimate))
        .with_state(state);
    let app = match &config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    Ok(app.layer(cors(&config.cors_origins)?))
}

/// Binds `addr` and serves until the task is cancelled.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>, config: &ServerConfig) -> std::io::Result<()> {
    let app = router(state, config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}

/// Serves on an already-bound listener; used by tests and embedders.
pub async fn serve_on(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}
