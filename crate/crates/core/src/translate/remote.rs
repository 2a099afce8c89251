use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{TranslateError, TranslatorBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{endpoint}/translate`.
    pub endpoint: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Retries after the first attempt.
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Delay before the first retry; doubled for each further one.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> u64 {
    10_000
}

fn default_retries() -> u32 {
    3
}

fn default_backoff() -> u64 {
    200
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout_ms: default_timeout(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    q: &'a [String],
    source: &'a str,
    target: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    translations: Vec<String>,
}

/// JSON-over-HTTP client for an external MT service.
pub struct RemoteTranslator {
    config: RemoteConfig,
    agent: Agent,
}

impl RemoteTranslator {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn attempt(&self, url: &str, body: &WireRequest<'_>) -> Result<Vec<String>, Attempt> {
        let mut resp = self.agent.post(url).send_json(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(Attempt::Retry(format!("HTTP status {status}")));
        }
        let text = resp.body_mut().read_to_string().map_err(|e| Attempt::Retry(e.to_string()))?;
        let parsed: WireResponse =
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(TranslateError::Protocol(e.to_string())))?;
        if parsed.translations.len() != body.q.len() {
            return Err(Attempt::Fatal(TranslateError::Protocol(format!(
                "{} translations for {} inputs",
                parsed.translations.len(),
                body.q.len()
            ))));
        }
        Ok(parsed.translations)
    }
}

enum Attempt {
    Retry(String),
    Fatal(TranslateError),
}

impl TranslatorBackend for RemoteTranslator {
    fn translate(&self, texts: &[String], source: &str, target: &str) -> Result<Vec<String>, TranslateError> {
        let url = format!("{}/translate", self.config.endpoint.trim_end_matches('/'));
        let body = WireRequest { q: texts, source, target };
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&url, &body) {
                Ok(t) => return Ok(t),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(TranslateError::Transport(format!(
            "{url} failed after {} attempts: {last}",
            self.config.retries + 1
        )))
    }

    fn describe(&self) -> String {
        format!("remote({})", self.config.endpoint)
    }
}
