use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use tracefold_core::metrics::GraphStats;
use tracefold_core::optimize::{analyst_prompt, Analyst, ANALYST_SYSTEM_PROMPT};
use tracefold_core::{Error, Result};

pub const ENDPOINT_VAR: &str = "ANALYST_ENDPOINT";
pub const TOKEN_VAR: &str = "ANALYST_TOKEN";
pub const TIMEOUT_VAR: &str = "ANALYST_TIMEOUT_SECS";
const DEFAULT_TIMEOUT_SECS: u64 = 60;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalystSettings {
    pub endpoint: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl AnalystSettings {
    /// Reads `ANALYST_ENDPOINT`, `ANALYST_TOKEN` and `ANALYST_TIMEOUT_SECS`.
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let endpoint = get(ENDPOINT_VAR)
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| Error::Config(format!("{ENDPOINT_VAR} is not set")))?;
        let timeout = match get(TIMEOUT_VAR) {
            None => DEFAULT_TIMEOUT_SECS,
            Some(s) => s
                .trim()
                .parse::<u64>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("{TIMEOUT_VAR} must be a positive integer, got {s:?}")))?,
        };
        Ok(AnalystSettings {
            endpoint,
            token: get(TOKEN_VAR).filter(|s| !s.is_empty()),
            timeout: Duration::from_secs(timeout),
        })
    }
}

/// Posts `{system, user}` to a chat-completion endpoint and takes the reply
/// text, either the raw body or the `text` field of a JSON object.
///
/// Blocking; do not call from inside an async runtime.
pub struct HttpAnalyst {
    settings: AnalystSettings,
    http: reqwest::blocking::Client,
}

impl HttpAnalyst {
    pub fn new(settings: AnalystSettings) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| Error::Config(format!("analyst client: {e}")))?;
        Ok(HttpAnalyst { settings, http })
    }

    pub fn from_env() -> Result<Self> {
        Self::new(AnalystSettings::from_env()?)
    }
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

fn reply_text(body: String) -> String {
    match serde_json::from_str::<TextReply>(&body) {
        Ok(r) => r.text,
        Err(_) => body,
    }
}

impl Analyst for HttpAnalyst {
    fn propose(&mut self, sample: &[String], stats: &GraphStats) -> Result<String> {
        let body = json!({
            "system": ANALYST_SYSTEM_PROMPT,
            "user": analyst_prompt(sample, stats),
        });
        let mut req = self.http.post(&self.settings.endpoint).json(&body);
        if let Some(t) = &self.settings.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| Error::Analyst(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Analyst(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Analyst(format!("analyst returned {status}: {text}")));
        }
        Ok(reply_text(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lookup<'a>(pairs: &'a [(&'a str, &'a str)]) -> impl Fn(&str) -> Option<String> + 'a {
        move |k| pairs.iter().find(|(n, _)| *n == k).map(|(_, v)| v.to_string())
    }

    #[test]
    fn settings_from_lookup() {
        let s = AnalystSettings::from_lookup(lookup(&[(ENDPOINT_VAR, "http://x/v1"), (TOKEN_VAR, "t")])).unwrap();
        assert_eq!(s.token.as_deref(), Some("t"));
        assert_eq!(s.timeout, Duration::from_secs(DEFAULT_TIMEOUT_SECS));

        let s = AnalystSettings::from_lookup(lookup(&[(ENDPOINT_VAR, "http://x"), (TIMEOUT_VAR, "5")])).unwrap();
        assert_eq!((s.token, s.timeout), (None, Duration::from_secs(5)));
    }

    #[test]
    fn settings_errors_are_config_errors() {
        for pairs in [
            &[][..],
            &[(ENDPOINT_VAR, " ")][..],
            &[(ENDPOINT_VAR, "http://x"), (TIMEOUT_VAR, "0")][..],
            &[(ENDPOINT_VAR, "http://x"), (TIMEOUT_VAR, "soon")][..],
        ] {
            let e = AnalystSettings::from_lookup(lookup(pairs)).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{pairs:?}");
        }
    }

    #[test]
    fn reply_forms() {
        assert_eq!(reply_text(r#"{"text":"{\"actions\":[]}"}"#.into()), r#"{"actions":[]}"#);
        assert_eq!(reply_text(r#"{"actions":[]}"#.into()), r#"{"actions":[]}"#);
        assert_eq!(reply_text("plain".into()), "plain");
    }
}
