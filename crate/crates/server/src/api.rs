use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracefold_core::extract::{extract_meta_tools, metatools_to_json, Extraction, ExtractionConfig};
use tracefold_core::graph::{to_json_value, truncated_json_value};
use tracefold_core::metrics::{duplication_curve, estimate_savings, max_depth, savings_json, GraphStats};
use tracefold_core::normalize::{validate_ruleset, Diagnostic, RuleSet};
use tracefold_core::optimize::{apply_actions, parse_proposal, Action};

use crate::session::{Session, Snapshot};
use crate::AppState;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    diagnostics: Vec<Diagnostic>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            diagnostics: Vec::new(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl From<tracefold_core::Error> for ApiError {
    fn from(e: tracefold_core::Error) -> Self {
        use tracefold_core::Error::*;
        match e {
            Rule(_) | Config(_) | Schema { .. } | GraphFormat(_) | MetaToolFormat(_) => {
                ApiError::bad_request(e.to_string())
            }
            other => ApiError::internal(other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if !self.diagnostics.is_empty() {
            body["diagnostics"] = json!(self.diagnostics);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn session(state: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    state
        .sessions
        .read()
        .expect("session table")
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> tracefold_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::from)
}

/// The validated actions of a request body, or 400 with every diagnostic.
fn actions_from(body: &Bytes) -> ApiResult<Vec<Action>> {
    let text = std::str::from_utf8(body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let text = if text.trim().is_empty() {
        r#"{"actions":[]}"#
    } else {
        text
    };
    let parsed = parse_proposal(text);
    if parsed.diagnostics.is_empty() {
        Ok(parsed.proposal.actions)
    } else {
        Err(ApiError {
            diagnostics: parsed.diagnostics,
            ..ApiError::bad_request("invalid actions")
        })
    }
}

pub async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Serialize)]
struct CorpusInfo {
    label: String,
    executions: usize,
    total_calls: usize,
}

pub async fn corpora(State(state): State<Arc<AppState>>) -> Json<Value> {
    let list: Vec<CorpusInfo> = state
        .corpora
        .iter()
        .map(|(label, c)| {
            let s = c.summary();
            CorpusInfo {
                label: label.clone(),
                executions: s.executions,
                total_calls: s.total_calls,
            }
        })
        .collect();
    Json(json!(list))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    corpus: Option<String>,
    rules: Option<RuleSet>,
}

pub async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = parse_body(&body)?;
    let label = match req.corpus {
        Some(l) => l,
        None if state.corpora.len() == 1 => state.corpora.keys().next().cloned().unwrap_or_default(),
        None => {
            return Err(ApiError::bad_request(
                "\"corpus\" is required when several corpora are loaded",
            ))
        }
    };
    let corpus = state
        .corpora
        .get(&label)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown corpus {label}")))?;
    let rules = req.rules.unwrap_or_default();
    let diagnostics = validate_ruleset(&rules);
    if !diagnostics.is_empty() {
        return Err(ApiError {
            diagnostics,
            ..ApiError::bad_request("invalid rules")
        });
    }
    let c = corpus.clone();
    let snap = blocking(move || Snapshot::compute(&c, rules)).await?;
    let stats = snap.stats;
    let id = uuid::Uuid::new_v4().to_string();
    let session = Arc::new(Session::new(id.clone(), label, corpus, snap));
    state
        .sessions
        .write()
        .expect("session table")
        .insert(id.clone(), session);
    log::info!("session {id} created");
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id, "stats": stats }))).into_response())
}

pub async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(session(&state, &id)?.info())))
}

pub async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    match state.sessions.write().expect("session table").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}"))),
    }
}

#[derive(Debug, Deserialize)]
pub struct GraphQuery {
    limit_nodes: Option<usize>,
}

pub async fn graph(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<GraphQuery>,
) -> ApiResult<Json<Value>> {
    let snap = session(&state, &id)?.current();
    Ok(Json(match q.limit_nodes {
        Some(k) => truncated_json_value(&snap.graph, k),
        None => to_json_value(&snap.graph),
    }))
}

pub async fn stats(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<GraphStats>> {
    Ok(Json(session(&state, &id)?.current().stats))
}

pub async fn rules(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<RuleSet>> {
    Ok(Json(session(&state, &id)?.current().rules.clone()))
}

#[derive(Debug, Deserialize)]
pub struct CurveQuery {
    max_step: Option<usize>,
}

pub async fn curve(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<CurveQuery>,
) -> ApiResult<Json<Value>> {
    let snap = session(&state, &id)?.current();
    let steps = q.max_step.unwrap_or_else(|| max_depth(&snap.graph));
    Ok(Json(json!(duplication_curve(&snap.graph, steps))))
}

#[derive(Serialize)]
struct Delta {
    nodes: i64,
    edges: i64,
    sinks: i64,
}

fn delta(before: &GraphStats, after: &GraphStats) -> Delta {
    Delta {
        nodes: after.nodes as i64 - before.nodes as i64,
        edges: after.edges as i64 - before.edges as i64,
        sinks: after.sinks as i64 - before.sinks as i64,
    }
}

pub async fn preview(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let session = session(&state, &id)?;
    let actions = actions_from(&body)?;
    let current = session.current();
    let rules = apply_actions(&current.rules, &actions);
    let corpus = session.corpus.clone();
    let next = blocking(move || Snapshot::compute(&corpus, rules)).await?;
    Ok(Json(json!({
        "stats_before": current.stats,
        "stats_after": next.stats,
        "delta": delta(&current.stats, &next.stats),
    })))
}

fn busy() -> ApiError {
    ApiError::new(StatusCode::CONFLICT, "another change to this session is in progress")
}

pub async fn apply(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let session = session(&state, &id)?;
    let _guard = session.mutation.try_lock().map_err(|_| busy())?;
    let actions = actions_from(&body)?;
    let current = session.current();
    let rules = apply_actions(&current.rules, &actions);
    let corpus = session.corpus.clone();
    let next = blocking(move || Snapshot::compute(&corpus, rules)).await?;
    let after = next.stats;
    let index = session.push(next);
    Ok(Json(json!({
        "snapshot": index,
        "stats_before": current.stats,
        "stats_after": after,
        "delta": delta(&current.stats, &after),
    })))
}

pub async fn undo(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = session(&state, &id)?;
    let _guard = session.mutation.try_lock().map_err(|_| busy())?;
    let snap = session.pop().ok_or_else(|| ApiError::bad_request("nothing to undo"))?;
    Ok(Json(json!({
        "snapshot": session.info().snapshot,
        "stats": snap.stats,
        "rules": snap.rules,
    })))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtractRequest {
    threshold: Option<u64>,
    max_meta_tools: Option<usize>,
    min_chain_calls: Option<usize>,
    #[serde(default)]
    allow: Vec<String>,
}

impl ExtractRequest {
    fn config(self, executions: usize) -> ExtractionConfig {
        let mut cfg = match self.threshold {
            Some(t) => ExtractionConfig::new(t),
            None => ExtractionConfig::for_corpus(executions),
        };
        cfg.max_meta_tools = self.max_meta_tools;
        if let Some(m) = self.min_chain_calls {
            cfg.min_chain_calls = m;
        }
        cfg.allow = self.allow;
        cfg
    }
}

async fn run_extraction(state: &AppState, id: &str, body: &Bytes) -> ApiResult<(Arc<Snapshot>, Extraction)> {
    let snap = session(state, id)?.current();
    let req: ExtractRequest = parse_body(body)?;
    let cfg = req.config(snap.view.len());
    let s = snap.clone();
    let ex = blocking(move || extract_meta_tools(&s.graph, &s.view, &cfg)).await?;
    Ok((snap, ex))
}

fn json_text(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

/// Body is the meta-tool file exactly as the command line writes it.
pub async fn extract(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let (_, ex) = run_extraction(&state, &id, &body).await?;
    Ok(json_text(metatools_to_json(&ex.tools)))
}

pub async fn estimate(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let (snap, ex) = run_extraction(&state, &id, &body).await?;
    Ok(json_text(savings_json(&estimate_savings(&ex.tools, &snap.view))))
}
