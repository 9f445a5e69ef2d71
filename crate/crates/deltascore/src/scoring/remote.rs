//! Remote logprob backend.
//!
//! Speaks one canonical wire shape over HTTP JSON:
//!
//! ```text
//! POST <endpoint>
//! {"model": "...", "context": "...", "continuation": "..."}
//! -> {"tokens": ["..."], "logprobs": [-1.2, ...]}
//! ```
//!
//! The remote side maps this onto whatever echo-logprob completion API it
//! fronts; that mapping is the only provider-specific code anywhere. The
//! backend scores the continuation in the provider's own token space, so
//! `token_count` is the provider's count, not the whitespace count.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ConditionChannel, ScoringBackend, ScoringError, TokenLogLik};
use crate::replay::{Cassette, ReplayMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token, if any.
    pub auth_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            auth_env: None,
            timeout_secs: 30,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Serialize)]
struct ScoreRequest<'a> {
    model: &'a str,
    context: &'a str,
    continuation: &'a str,
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    #[allow(dead_code)]
    tokens: Vec<String>,
    logprobs: Vec<f64>,
    #[serde(default)]
    truncated: bool,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    http: reqwest::blocking::Client,
    cassette: Cassette,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig, cassette: Cassette) -> Result<Self, ScoringError> {
        if config.timeout_secs == 0 {
            return Err(ScoringError::InvalidInput("timeout must be > 0".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ScoringError::Backend {
                backend: "remote".into(),
                message: format!("http client: {e}"),
            })?;
        Ok(Self {
            config,
            http,
            cassette,
        })
    }

    fn request_value(&self, condition: &str, story: &str) -> Value {
        serde_json::to_value(ScoreRequest {
            model: &self.config.model,
            context: condition,
            continuation: story,
        })
        .expect("request serializes")
    }

    fn post(&self, request: &Value) -> Result<Value, ScoringError> {
        let mut attempt = 0;
        loop {
            let mut call = self.http.post(&self.config.endpoint).json(request);
            if let Some(var) = &self.config.auth_env {
                if let Ok(token) = std::env::var(var) {
                    call = call.bearer_auth(token);
                }
            }
            let outcome = call.send().and_then(|resp| resp.error_for_status());
            match outcome {
                Ok(resp) => {
                    return resp.json::<Value>().map_err(|e| ScoringError::Backend {
                        backend: self.id(),
                        message: format!("malformed response body: {e}"),
                    });
                }
                Err(e) => {
                    if attempt >= self.config.max_retries {
                        return Err(ScoringError::Backend {
                            backend: self.id(),
                            message: format!("gave up after {attempt} retries: {e}"),
                        });
                    }
                    std::thread::sleep(Duration::from_millis(50 << attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn exchange(&self, request: Value) -> Result<Value, ScoringError> {
        match self.cassette.mode() {
            ReplayMode::Replay => Ok(self.cassette.fetch(&request)?),
            ReplayMode::Live => self.post(&request),
            ReplayMode::Record => {
                let response = self.post(&request)?;
                self.cassette.store(request, response.clone())?;
                Ok(response)
            }
        }
    }
}

impl ScoringBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote-{}", self.config.model)
    }

    fn condition_channel(&self) -> ConditionChannel {
        ConditionChannel::Separate
    }

    fn score(&self, condition: &str, story: &str) -> Result<TokenLogLik, ScoringError> {
        let request = self.request_value(condition, story);
        let raw = self.exchange(request)?;
        let parsed: ScoreResponse =
            serde_json::from_value(raw).map_err(|e| ScoringError::Backend {
                backend: self.id(),
                message: format!("unexpected response shape: {e}"),
            })?;
        if parsed.logprobs.is_empty() {
            return Err(ScoringError::EmptyScore { backend: self.id() });
        }
        let mut ll = TokenLogLik::new(parsed.logprobs, self.id(), !condition.trim().is_empty())?;
        ll.truncated = parsed.truncated;
        Ok(ll)
    }
}
