use reqwest::{Method, Response};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracefold_core::metrics::{DuplicationPoint, GraphStats};
use tracefold_core::normalize::{Diagnostic, RuleSet};

use crate::{ClientError, Result};

#[derive(Debug, Clone, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub stats: GraphStats,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub corpus: String,
    pub snapshot: usize,
    pub stats_history: Vec<GraphStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub struct StatsDelta {
    pub nodes: i64,
    pub edges: i64,
    pub sinks: i64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Preview {
    pub stats_before: GraphStats,
    pub stats_after: GraphStats,
    pub delta: StatsDelta,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ApplyResult {
    pub snapshot: usize,
    pub stats_before: GraphStats,
    pub stats_after: GraphStats,
    pub delta: StatsDelta,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExtractParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_meta_tools: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_chain_calls: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub allow: Vec<String>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
    #[serde(default)]
    diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone)]
pub struct TracefoldClient {
    base: String,
    http: reqwest::Client,
}

impl TracefoldClient {
    pub fn new(base_url: &str) -> Self {
        TracefoldClient {
            base: base_url.trim_end_matches('/').to_owned(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send(&self, method: Method, path: &str, body: Option<String>) -> Result<Response> {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(b) = body {
            req = req.header(reqwest::header::CONTENT_TYPE, "application/json").body(b);
        }
        let resp = req.send().await?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status().as_u16();
        let text = resp.text().await?;
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(e) => ClientError::Status {
                status,
                message: e.error,
                diagnostics: e.diagnostics,
            },
            Err(_) => ClientError::Status {
                status,
                message: text,
                diagnostics: Vec::new(),
            },
        })
    }

    async fn text(&self, method: Method, path: &str, body: Option<String>) -> Result<String> {
        Ok(self.send(method, path, body).await?.text().await?)
    }

    async fn json<T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<String>) -> Result<T> {
        let text = self.text(method, path, body).await?;
        serde_json::from_str(&text).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub async fn health(&self) -> Result<()> {
        self.send(Method::GET, "/health", None).await.map(drop)
    }

    pub async fn corpora(&self) -> Result<Value> {
        self.json(Method::GET, "/corpora", None).await
    }

    pub async fn create_session(&self, corpus: Option<&str>, rules: Option<&RuleSet>) -> Result<SessionCreated> {
        let mut body = serde_json::Map::new();
        if let Some(c) = corpus {
            body.insert("corpus".into(), c.into());
        }
        if let Some(r) = rules {
            body.insert(
                "rules".into(),
                serde_json::to_value(r).map_err(|e| ClientError::Decode(e.to_string()))?,
            );
        }
        self.json(Method::POST, "/sessions", Some(Value::Object(body).to_string()))
            .await
    }

    pub async fn session(&self, id: &str) -> Result<SessionInfo> {
        self.json(Method::GET, &format!("/sessions/{id}"), None).await
    }

    pub async fn delete_session(&self, id: &str) -> Result<()> {
        self.send(Method::DELETE, &format!("/sessions/{id}"), None)
            .await
            .map(drop)
    }

    pub async fn stats(&self, id: &str) -> Result<GraphStats> {
        self.json(Method::GET, &format!("/sessions/{id}/stats"), None).await
    }

    pub async fn rules(&self, id: &str) -> Result<RuleSet> {
        self.json(Method::GET, &format!("/sessions/{id}/rules"), None).await
    }

    pub async fn graph(&self, id: &str, limit_nodes: Option<usize>) -> Result<Value> {
        let path = match limit_nodes {
            Some(k) => format!("/sessions/{id}/graph?limit_nodes={k}"),
            None => format!("/sessions/{id}/graph"),
        };
        self.json(Method::GET, &path, None).await
    }

    pub async fn curve(&self, id: &str, max_step: Option<usize>) -> Result<Vec<DuplicationPoint>> {
        let path = match max_step {
            Some(k) => format!("/sessions/{id}/curve?max_step={k}"),
            None => format!("/sessions/{id}/curve"),
        };
        self.json(Method::GET, &path, None).await
    }

    /// `actions` is a proposal document, `{"actions": [...]}`.
    pub async fn preview(&self, id: &str, actions: &str) -> Result<Preview> {
        self.json(
            Method::POST,
            &format!("/sessions/{id}/rules/preview"),
            Some(actions.to_owned()),
        )
        .await
    }

    pub async fn apply(&self, id: &str, actions: &str) -> Result<ApplyResult> {
        self.json(
            Method::POST,
            &format!("/sessions/{id}/rules/apply"),
            Some(actions.to_owned()),
        )
        .await
    }

    pub async fn undo(&self, id: &str) -> Result<GraphStats> {
        #[derive(Deserialize)]
        struct Undo {
            stats: GraphStats,
        }
        let u: Undo = self.json(Method::POST, &format!("/sessions/{id}/undo"), None).await?;
        Ok(u.stats)
    }

    /// The meta-tool JSON exactly as the server sent it.
    pub async fn extract(&self, id: &str, params: &ExtractParams) -> Result<String> {
        let body = serde_json::to_string(params).map_err(|e| ClientError::Decode(e.to_string()))?;
        self.text(Method::POST, &format!("/sessions/{id}/extract"), Some(body))
            .await
    }

    /// The savings report JSON exactly as the server sent it.
    pub async fn estimate(&self, id: &str, params: &ExtractParams) -> Result<String> {
        let body = serde_json::to_string(params).map_err(|e| ClientError::Decode(e.to_string()))?;
        self.text(Method::POST, &format!("/sessions/{id}/estimate"), Some(body))
            .await
    }
}
