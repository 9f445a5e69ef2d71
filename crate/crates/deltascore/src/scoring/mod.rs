//! Token-mean conditional log-likelihood `log p(s|c)` under pluggable
//! backends: a built-in trainable n-gram model and a remote logprob client.
//!
//! Both likelihood formulations reduce to the same arithmetic — the mean
//! natural-log probability over the story tokens only — so a backend just
//! declares where the condition enters (concatenated into the scored
//! sequence, or a separate conditioning channel) and returns per-token
//! logprobs for the story.

mod ngram;
mod remote;

pub use ngram::{NGramModel, BOS_TOKEN, END_TOKEN, UNK_TOKEN};
pub use remote::{RemoteBackend, RemoteConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::replay::ReplayError;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("story yields no scored tokens under backend '{backend}'")]
    EmptyScore { backend: String },
    #[error("logprob {0} is positive; probabilities cannot exceed 1")]
    InvalidLogprob(f64),
    #[error("backend '{backend}' failed: {message}")]
    Backend { backend: String, message: String },
    #[error("all {count} batch items failed; first cause: {first_cause}")]
    BatchFailed { count: usize, first_cause: String },
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("model file {path}: {message}")]
    ModelFile { path: String, message: String },
}

/// Where a backend takes the story condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionChannel {
    /// Condition tokens are prepended to the scored sequence (decoder style).
    Concatenated,
    /// Condition travels in a separate channel (encoder-decoder style).
    Separate,
}

/// Per-token log-probabilities of the story tokens given the condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogLik {
    pub story_token_logprobs: Vec<f64>,
    /// Arithmetic mean of `story_token_logprobs`.
    pub mean_logprob: f64,
    pub token_count: usize,
    pub backend: String,
    pub condition_included: bool,
    /// The backend had to cut the input to fit its context.
    #[serde(default)]
    pub truncated: bool,
}

impl TokenLogLik {
    pub fn new(
        story_token_logprobs: Vec<f64>,
        backend: impl Into<String>,
        condition_included: bool,
    ) -> Result<Self, ScoringError> {
        let backend = backend.into();
        if story_token_logprobs.is_empty() {
            return Err(ScoringError::EmptyScore { backend });
        }
        if let Some(&bad) = story_token_logprobs.iter().find(|lp| **lp > 0.0) {
            return Err(ScoringError::InvalidLogprob(bad));
        }
        let token_count = story_token_logprobs.len();
        let mean_logprob = story_token_logprobs.iter().sum::<f64>() / token_count as f64;
        Ok(Self {
            story_token_logprobs,
            mean_logprob,
            token_count,
            backend,
            condition_included,
            truncated: false,
        })
    }
}

/// A likelihood backend. Implementations must be safe for concurrent use.
pub trait ScoringBackend: Sync {
    fn id(&self) -> String;

    fn condition_channel(&self) -> ConditionChannel;

    /// Score the story tokens given the condition. An empty condition means
    /// unconditional scoring of the story alone.
    fn score(&self, condition: &str, story: &str) -> Result<TokenLogLik, ScoringError>;
}

/// Mean conditional log-likelihood of `story` given `condition`.
pub fn score_conditional(
    backend: &dyn ScoringBackend,
    condition: &str,
    story: &str,
) -> Result<TokenLogLik, ScoringError> {
    if story.trim().is_empty() {
        return Err(ScoringError::InvalidInput("story is empty".into()));
    }
    backend.score(condition, story)
}

/// Score a batch, preserving input order and isolating per-item failures.
/// Errors only when every item failed.
pub fn score_batch(
    backend: &dyn ScoringBackend,
    items: &[(String, String)],
) -> Result<Vec<Result<TokenLogLik, ScoringError>>, ScoringError> {
    let results: Vec<Result<TokenLogLik, ScoringError>> = items
        .iter()
        .map(|(condition, story)| score_conditional(backend, condition, story))
        .collect();
    if !items.is_empty() && results.iter().all(|r| r.is_err()) {
        let first_cause = results
            .iter()
            .find_map(|r| r.as_ref().err().map(|e| e.to_string()))
            .unwrap_or_default();
        return Err(ScoringError::BatchFailed {
            count: items.len(),
            first_cause,
        });
    }
    Ok(results)
}

/// Backend selection plus its parameters, as carried by run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    NGram {
        order: usize,
        alpha: f64,
        model: String,
    },
    RemoteLogprob {
        endpoint: String,
        model: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        auth_env: Option<String>,
        timeout_secs: u64,
        max_retries: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cassette: Option<String>,
    },
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), ScoringError> {
        match self {
            BackendConfig::NGram { order, alpha, .. } => {
                if *order < 1 {
                    return Err(ScoringError::InvalidInput("ngram order must be >= 1".into()));
                }
                if *alpha <= 0.0 {
                    return Err(ScoringError::InvalidInput(
                        "smoothing constant must be > 0".into(),
                    ));
                }
            }
            BackendConfig::RemoteLogprob { timeout_secs, .. } => {
                if *timeout_secs == 0 {
                    return Err(ScoringError::InvalidInput("timeout must be > 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// Test-support backend driven by a closure.
pub struct FnBackend<F> {
    id: String,
    channel: ConditionChannel,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&str, &str) -> Result<TokenLogLik, ScoringError> + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self {
            id: id.into(),
            channel: ConditionChannel::Concatenated,
            f,
        }
    }
}

impl<F> ScoringBackend for FnBackend<F>
where
    F: Fn(&str, &str) -> Result<TokenLogLik, ScoringError> + Sync,
{
    fn id(&self) -> String {
        self.id.clone()
    }

    fn condition_channel(&self) -> ConditionChannel {
        self.channel
    }

    fn score(&self, condition: &str, story: &str) -> Result<TokenLogLik, ScoringError> {
        (self.f)(condition, story)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed(logprobs: &'static [f64]) -> FnBackend<impl Fn(&str, &str) -> Result<TokenLogLik, ScoringError> + Sync> {
        FnBackend::new("fixed", move |condition, _| {
            TokenLogLik::new(logprobs.to_vec(), "fixed", !condition.is_empty())
        })
    }

    #[test]
    fn mean_of_fixed_logprobs() {
        let backend = fixed(&[-1.0, -2.0, -3.0]);
        let ll = score_conditional(&backend, "c", "s").unwrap();
        assert_eq!(ll.mean_logprob, -2.0);
        assert_eq!(ll.token_count, 3);
        assert!(ll.condition_included);
    }

    #[test]
    fn positive_logprob_rejected() {
        assert!(matches!(
            TokenLogLik::new(vec![-1.0, 0.5], "x", false),
            Err(ScoringError::InvalidLogprob(_))
        ));
        // exactly zero (probability one) is allowed
        assert!(TokenLogLik::new(vec![0.0], "x", false).is_ok());
    }

    #[test]
    fn empty_story_rejected() {
        let backend = fixed(&[-1.0]);
        assert!(matches!(
            score_conditional(&backend, "c", "   "),
            Err(ScoringError::InvalidInput(_))
        ));
    }

    #[test]
    fn mean_matches_recomputation() {
        let ll = TokenLogLik::new(vec![-0.3, -1.7, -2.9, -0.11], "x", false).unwrap();
        let recomputed = ll.story_token_logprobs.iter().sum::<f64>() / ll.token_count as f64;
        assert!((ll.mean_logprob - recomputed).abs() <= 1e-12);
    }

    #[test]
    fn batch_isolates_failures_and_keeps_order() {
        let backend = FnBackend::new("flaky", |_, story: &str| {
            if story == "bad" {
                Err(ScoringError::Backend {
                    backend: "flaky".into(),
                    message: "boom".into(),
                })
            } else {
                TokenLogLik::new(vec![-(story.len() as f64)], "flaky", false)
            }
        });
        let items = vec![
            (String::new(), "one".to_string()),
            (String::new(), "bad".to_string()),
            (String::new(), "three".to_string()),
        ];
        let results = score_batch(&backend, &items).unwrap();
        assert!(results[0].is_ok());
        assert!(results[1].is_err());
        assert!(results[2].is_ok());
        assert_eq!(results[0].as_ref().unwrap().mean_logprob, -3.0);
        assert_eq!(results[2].as_ref().unwrap().mean_logprob, -5.0);
    }

    #[test]
    fn batch_of_one_equals_single_call() {
        let backend = fixed(&[-1.5, -2.5]);
        let single = score_conditional(&backend, "c", "s").unwrap();
        let batch = score_batch(&backend, &[("c".into(), "s".into())]).unwrap();
        assert_eq!(batch[0].as_ref().unwrap(), &single);
    }

    #[test]
    fn all_failed_batch_errors() {
        let backend = FnBackend::new("dead", |_, _: &str| {
            Err(ScoringError::Backend {
                backend: "dead".into(),
                message: "down".into(),
            })
        });
        let items = vec![(String::new(), "a".to_string()), (String::new(), "b".to_string())];
        assert!(matches!(
            score_batch(&backend, &items),
            Err(ScoringError::BatchFailed { count: 2, .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(BackendConfig::NGram { order: 0, alpha: 1.0, model: "m".into() }
            .validate()
            .is_err());
        assert!(BackendConfig::NGram { order: 2, alpha: 0.0, model: "m".into() }
            .validate()
            .is_err());
        assert!(BackendConfig::NGram { order: 2, alpha: 1.0, model: "m".into() }
            .validate()
            .is_ok());
    }
}
