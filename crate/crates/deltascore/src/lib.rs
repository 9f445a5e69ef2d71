//! Reference-free evaluation of conditioned stories by likelihood
//! difference: perturb a story in an aspect-targeted way, score both
//! versions under a language-model backend, and take the drop in token-mean
//! conditional log-likelihood as the quality signal. A meta-evaluation
//! harness correlates those scores with human ratings at the story level.
//!
//! The `examples/` directory has one runnable example per capability; the
//! `deltascore` binary exposes the same pipeline as `perturb`, `train-lm`,
//! `delta` and `correlate` subcommands.

pub mod delta;
pub mod eval;
pub mod llm;
pub mod perturb;
pub mod replay;
pub mod report;
pub mod rng;
pub mod run;
pub mod scoring;
pub mod text;

pub use delta::{delta_score, evaluate_aspects, DeltaResult};
pub use perturb::{Aspect, PerturbationKind, PerturbationSpec, PerturbedStory};
pub use scoring::{score_conditional, NGramModel, ScoringBackend, TokenLogLik};
pub use text::ConditionedStory;
