//! Minimal client for an external instruction-following text service.
//!
//! Used by the three service-driven operations: listing title-relevant
//! words, the commonsense rewrite, and the blander-narrative rewrite. The
//! prompt templates are fixed strings with `{title}` / `{story}` slots.
//! All traffic can be recorded to and replayed from a cassette so tests and
//! reruns need no network.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::replay::{Cassette, ReplayError, ReplayMode};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("service returned no parseable words")]
    EmptyResult,
    #[error("service call failed: {0}")]
    Transport(String),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

/// The three fixed prompt templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateId {
    RelevantWords,
    Commonsense,
    BlanderNarrative,
}

impl std::fmt::Display for TemplateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TemplateId::RelevantWords => "relevant-words",
            TemplateId::Commonsense => "commonsense",
            TemplateId::BlanderNarrative => "blander-narrative",
        })
    }
}

const RELEVANT_WORDS_TEMPLATE: &str = "Find all words in the given story that is relevant to the given title. Please only print words in the given story, and separate them by ','. \"title\": {title}, \"story\": {story}";

const COMMONSENSE_TEMPLATE: &str = "Revise the following story such that certain elements does not make sense. The revision should be minimal, e.g., by changing a few words. \"story\": {story}";

const BLANDER_NARRATIVE_TEMPLATE: &str = "Revise the following story to make it less interesting (e.g., expected ending, no plot twist). The revision should be minimal. \"story\": {story}";

impl TemplateId {
    pub fn template(self) -> &'static str {
        match self {
            TemplateId::RelevantWords => RELEVANT_WORDS_TEMPLATE,
            TemplateId::Commonsense => COMMONSENSE_TEMPLATE,
            TemplateId::BlanderNarrative => BLANDER_NARRATIVE_TEMPLATE,
        }
    }

    pub fn needs_title(self) -> bool {
        matches!(self, TemplateId::RelevantWords)
    }
}

/// Fill a template's slots. Every template takes `{story}`; only the
/// relevant-words one also takes `{title}`.
pub fn render_prompt(id: TemplateId, title: &str, story: &str) -> Result<String, ServiceError> {
    if story.trim().is_empty() {
        return Err(ServiceError::InvalidInput(format!(
            "template '{id}' requires a story"
        )));
    }
    if id.needs_title() && title.trim().is_empty() {
        return Err(ServiceError::InvalidInput(format!(
            "template '{id}' requires a title"
        )));
    }
    let rendered = id
        .template()
        .replace("{title}", title)
        .replace("{story}", story);
    Ok(rendered)
}

/// Parse a relevant-words response: split on commas, trim, case-fold, drop
/// empties and duplicates.
pub fn parse_relevant_words(response: &str) -> Result<BTreeSet<String>, ServiceError> {
    let words: BTreeSet<String> = response
        .split(',')
        .map(|w| w.trim().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        return Err(ServiceError::EmptyResult);
    }
    Ok(words)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    /// Defaults to 0 for maximal reproducibility.
    #[serde(default)]
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            auth_env: None,
            temperature: 0.0,
            timeout_secs: 60,
            max_retries: 3,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.temperature < 0.0 {
            return Err(ServiceError::InvalidInput("temperature must be >= 0".into()));
        }
        if self.timeout_secs == 0 {
            return Err(ServiceError::InvalidInput("timeout must be > 0".into()));
        }
        Ok(())
    }
}

/// Chat-completion client over the generic wire shape
/// `{model, messages, temperature} -> {content}`.
pub struct ServiceClient {
    config: ServiceConfig,
    http: reqwest::blocking::Client,
    cassette: Cassette,
}

impl ServiceClient {
    pub fn new(config: ServiceConfig, cassette: Cassette) -> Result<Self, ServiceError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ServiceError::Transport(format!("http client: {e}")))?;
        Ok(Self {
            config,
            http,
            cassette,
        })
    }

    fn request_value(&self, prompt: &str) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        })
    }

    fn post(&self, request: &Value) -> Result<Value, ServiceError> {
        let mut attempt = 0;
        loop {
            let mut call = self.http.post(&self.config.endpoint).json(request);
            if let Some(var) = &self.config.auth_env {
                if let Ok(token) = std::env::var(var) {
                    call = call.bearer_auth(token);
                }
            }
            match call.send().and_then(|r| r.error_for_status()) {
                Ok(resp) => {
                    return resp
                        .json::<Value>()
                        .map_err(|e| ServiceError::Transport(format!("malformed body: {e}")))
                }
                Err(e) => {
                    if attempt >= self.config.max_retries {
                        return Err(ServiceError::Transport(format!(
                            "gave up after {attempt} retries: {e}"
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(50 << attempt));
                    attempt += 1;
                }
            }
        }
    }

    /// Send a prompt, honoring the cassette mode.
    pub fn complete(&self, prompt: &str) -> Result<String, ServiceError> {
        let request = self.request_value(prompt);
        let response = match self.cassette.mode() {
            ReplayMode::Replay => self.cassette.fetch(&request)?,
            ReplayMode::Live => self.post(&request)?,
            ReplayMode::Record => {
                let response = self.post(&request)?;
                self.cassette.store(request, response.clone())?;
                response
            }
        };
        response
            .get("content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ServiceError::Transport("response has no 'content' field".into()))
    }

    /// Relevant-word lookup: render, complete, parse.
    pub fn relevant_words(&self, title: &str, story: &str) -> Result<BTreeSet<String>, ServiceError> {
        let prompt = render_prompt(TemplateId::RelevantWords, title, story)?;
        let response = self.complete(&prompt)?;
        parse_relevant_words(&response)
    }
}
