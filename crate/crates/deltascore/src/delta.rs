//! The likelihood-difference computation: perturb, score both versions
//! under the same backend and condition, subtract.
//!
//! `delta = logp(story | condition) - logp(perturbed | condition)`, both
//! sides token-mean natural logs. A larger delta means the perturbation
//! hurt the story more, which predicts higher quality on the targeted
//! aspect. Deltas are reported raw; the per-token mean inside each
//! likelihood is the only length normalization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perturb::{
    apply, aspect_of, Aspect, AspectProfile, PerturbContext, PerturbError, PerturbationKind,
    PerturbationSpec,
};
use crate::rng::derive_seed;
use crate::scoring::{score_conditional, ScoringBackend, ScoringError, TokenLogLik};
use crate::text::ConditionedStory;

#[derive(Debug, Error)]
pub enum DeltaError {
    #[error("story '{id}': {source}")]
    Perturb {
        id: String,
        #[source]
        source: PerturbError,
    },
    #[error("story '{id}': {source}")]
    Scoring {
        id: String,
        #[source]
        source: ScoringError,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaFlags {
    pub noop: bool,
    pub truncated: bool,
    pub degenerate: bool,
}

/// One scored perturbation of one story.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaResult {
    pub id: String,
    pub aspect: Aspect,
    pub kind: PerturbationKind,
    pub degree: f64,
    pub seed: u64,
    pub logp_original: f64,
    pub logp_perturbed: f64,
    pub delta: f64,
    pub flags: DeltaFlags,
}

impl DeltaResult {
    /// Report row label, e.g. `jumble@0.9`.
    pub fn metric_id(&self) -> String {
        if self.kind.degree_controlled() {
            format!("{}@{}", self.kind, self.degree)
        } else {
            self.kind.to_string()
        }
    }
}

/// Per-story seed: hash of the global seed, the story id, and the kind, so
/// corpus reruns reproduce exactly while stories stay independent.
pub fn story_seed(global_seed: u64, story_id: &str, kind: PerturbationKind) -> u64 {
    derive_seed(global_seed, &[story_id, kind.name()])
}

fn scored(
    backend: &dyn ScoringBackend,
    condition: &str,
    text: &str,
    id: &str,
) -> Result<TokenLogLik, DeltaError> {
    score_conditional(backend, condition, text).map_err(|source| DeltaError::Scoring {
        id: id.to_string(),
        source,
    })
}

/// Score one (story, spec) pair, reusing an already-computed original
/// likelihood when the caller has one.
fn delta_with_original(
    story: &ConditionedStory,
    spec: &PerturbationSpec,
    aspect: Aspect,
    backend: &dyn ScoringBackend,
    ctx: &PerturbContext,
    original: &TokenLogLik,
) -> Result<DeltaResult, DeltaError> {
    let perturbed = apply(story, spec, ctx).map_err(|source| DeltaError::Perturb {
        id: story.id.clone(),
        source,
    })?;
    let mut flags = DeltaFlags {
        noop: perturbed.noop,
        truncated: original.truncated,
        degenerate: false,
    };
    let (logp_perturbed, delta) = if perturbed.noop {
        (original.mean_logprob, 0.0)
    } else {
        let scored_perturbed = scored(backend, &story.condition, &perturbed.perturbed, &story.id)?;
        flags.truncated |= scored_perturbed.truncated;
        (
            scored_perturbed.mean_logprob,
            original.mean_logprob - scored_perturbed.mean_logprob,
        )
    };
    Ok(DeltaResult {
        id: story.id.clone(),
        aspect,
        kind: spec.kind,
        degree: spec.degree,
        seed: spec.seed,
        logp_original: original.mean_logprob,
        logp_perturbed,
        delta,
        flags,
    })
}

/// The headline operation: perturb, score both versions, subtract.
pub fn delta_score(
    story: &ConditionedStory,
    spec: &PerturbationSpec,
    backend: &dyn ScoringBackend,
    ctx: &PerturbContext,
) -> Result<DeltaResult, DeltaError> {
    let original = scored(backend, &story.condition, &story.story, &story.id)?;
    delta_with_original(story, spec, aspect_of(spec.kind), backend, ctx, &original)
}

/// `delta_score` averaged over `replicates` seeds derived from the spec's
/// seed. The reported seed is the base spec's; flags are OR-ed except
/// `noop`, which requires every replicate to be a no-op.
pub fn delta_score_replicated(
    story: &ConditionedStory,
    spec: &PerturbationSpec,
    backend: &dyn ScoringBackend,
    ctx: &PerturbContext,
    replicates: u32,
) -> Result<DeltaResult, DeltaError> {
    let replicates = replicates.max(1);
    let original = scored(backend, &story.condition, &story.story, &story.id)?;
    let mut results = Vec::with_capacity(replicates as usize);
    for r in 0..replicates {
        let seed = if r == 0 {
            spec.seed
        } else {
            derive_seed(spec.seed, &[&story.id, spec.kind.name(), &r.to_string()])
        };
        let replicate_spec = spec.clone().with_seed(seed);
        results.push(delta_with_original(
            story,
            &replicate_spec,
            aspect_of(spec.kind),
            backend,
            ctx,
            &original,
        )?);
    }
    let n = results.len() as f64;
    let logp_perturbed = results.iter().map(|r| r.logp_perturbed).sum::<f64>() / n;
    let delta = original.mean_logprob - logp_perturbed;
    let flags = DeltaFlags {
        noop: results.iter().all(|r| r.flags.noop),
        truncated: results.iter().any(|r| r.flags.truncated),
        degenerate: results.iter().any(|r| r.flags.degenerate),
    };
    Ok(DeltaResult {
        id: story.id.clone(),
        aspect: aspect_of(spec.kind),
        kind: spec.kind,
        degree: spec.degree,
        seed: spec.seed,
        logp_original: original.mean_logprob,
        logp_perturbed,
        delta: if flags.noop { 0.0 } else { delta },
        flags,
    })
}

/// One result per aspect profile; the original likelihood is computed once
/// and shared across all profiles.
pub fn evaluate_aspects(
    story: &ConditionedStory,
    profiles: &[AspectProfile],
    backend: &dyn ScoringBackend,
    ctx: &PerturbContext,
) -> Result<BTreeMap<Aspect, DeltaResult>, DeltaError> {
    let original = scored(backend, &story.condition, &story.story, &story.id)?;
    let mut results = BTreeMap::new();
    for profile in profiles {
        let result =
            delta_with_original(story, &profile.spec, profile.aspect, backend, ctx, &original)?;
        results.insert(profile.aspect, result);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{FnBackend, NGramModel, TokenLogLik};

    fn toy_backend() -> NGramModel {
        NGramModel::train(&[vec!["a", "b"], vec!["a", "b"]], 2, 1.0).unwrap()
    }

    fn story(id: &str, text: &str) -> ConditionedStory {
        ConditionedStory::new(id, "", text).unwrap()
    }

    #[test]
    fn noop_perturbation_gives_exactly_zero() {
        let backend = toy_backend();
        // single-token story cannot be jumbled
        let story = story("s1", "a");
        let spec = PerturbationSpec::new(PerturbationKind::Jumble, 1.0, 7).unwrap();
        let result = delta_score(&story, &spec, &backend, &PerturbContext::default()).unwrap();
        assert!(result.flags.noop);
        assert_eq!(result.delta, 0.0);
        assert_eq!(result.logp_original, result.logp_perturbed);
    }

    // Hand-computed from the toy counts: jumbling "a b" into "b a" gives
    //   delta = [ln p(a|<s>) + ln p(b|a)]/2 - [ln p(b|<s>) + ln p(a|b)]/2
    //         = ln(1/2) - ln(1/6) = ln 3
    #[test]
    fn jumble_delta_matches_bigram_arithmetic() {
        let backend = toy_backend();
        let story = story("s1", "a b");
        // find a seed whose whole-story shuffle swaps the two tokens
        let seed = (0..64)
            .find(|&seed| {
                let spec = PerturbationSpec::new(PerturbationKind::Jumble, 1.0, seed).unwrap();
                crate::perturb::apply(&story, &spec, &PerturbContext::default())
                    .unwrap()
                    .perturbed
                    == "b a"
            })
            .expect("some seed swaps a two-token story");
        let spec = PerturbationSpec::new(PerturbationKind::Jumble, 1.0, seed).unwrap();
        let result = delta_score(&story, &spec, &backend, &PerturbContext::default()).unwrap();
        assert!((result.delta - 3.0f64.ln()).abs() < 1e-12);
        assert!(!result.flags.noop);
    }

    #[test]
    fn delta_identity_recomputes_exactly() {
        let backend = toy_backend();
        let story = story("s1", "a b a");
        let spec = PerturbationSpec::new(PerturbationKind::Jumble, 1.0, 3).unwrap();
        let result = delta_score(&story, &spec, &backend, &PerturbContext::default()).unwrap();
        assert!((result.delta - (result.logp_original - result.logp_perturbed)).abs() <= 1e-12);
    }

    #[test]
    fn evaluate_aspects_shares_one_original() {
        let backend = toy_backend();
        let story = story("s1", "a b a b");
        let profiles: Vec<AspectProfile> = Aspect::ALL
            .iter()
            .map(|&aspect| AspectProfile {
                aspect,
                spec: PerturbationSpec::new(PerturbationKind::Jumble, 0.9, 11).unwrap(),
            })
            .collect();
        let results =
            evaluate_aspects(&story, &profiles, &backend, &PerturbContext::default()).unwrap();
        assert_eq!(results.len(), 5);
        let originals: Vec<f64> = results.values().map(|r| r.logp_original).collect();
        assert!(originals.windows(2).all(|w| w[0] == w[1]));
        // identical specs mean identical deltas
        let deltas: Vec<f64> = results.values().map(|r| r.delta).collect();
        assert!(deltas.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn sign_invariant_under_log_base_change() {
        // doubling every logprob (a change of log base) must not flip signs
        let unit = FnBackend::new("unit", |_, story: &str| {
            let per_token = if story.contains("good") { -0.5 } else { -2.0 };
            TokenLogLik::new(vec![per_token; 4], "unit", false)
        });
        let doubled = FnBackend::new("doubled", |_, story: &str| {
            let per_token = if story.contains("good") { -1.0 } else { -4.0 };
            TokenLogLik::new(vec![per_token; 4], "doubled", false)
        });
        let story = story("s1", "good story here indeed");
        // pre-seeded jumble that rewrites tokens; any non-noop spec works
        let spec = PerturbationSpec::new(PerturbationKind::Jumble, 1.0, 5).unwrap();
        let a = delta_score(&story, &spec, &unit, &PerturbContext::default()).unwrap();
        let b = delta_score(&story, &spec, &doubled, &PerturbContext::default()).unwrap();
        assert_eq!(a.delta.signum(), b.delta.signum());
        assert!((b.delta - 2.0 * a.delta).abs() < 1e-12);
    }

    #[test]
    fn replicated_delta_averages() {
        let backend = toy_backend();
        let story = story("s1", "a b a b a");
        let spec = PerturbationSpec::new(PerturbationKind::Jumble, 1.0, 17).unwrap();
        let averaged =
            delta_score_replicated(&story, &spec, &backend, &PerturbContext::default(), 5).unwrap();
        assert!((averaged.delta
            - (averaged.logp_original - averaged.logp_perturbed))
            .abs()
            <= 1e-12);
        // replicate 0 reproduces the unreplicated result
        let single = delta_score(&story, &spec, &backend, &PerturbContext::default()).unwrap();
        let once =
            delta_score_replicated(&story, &spec, &backend, &PerturbContext::default(), 1).unwrap();
        assert_eq!(single.delta, once.delta);
    }

    #[test]
    fn story_seed_is_stable_per_kind() {
        let a = story_seed(1, "s1", PerturbationKind::Jumble);
        assert_eq!(a, story_seed(1, "s1", PerturbationKind::Jumble));
        assert_ne!(a, story_seed(1, "s1", PerturbationKind::Typo));
        assert_ne!(a, story_seed(1, "s2", PerturbationKind::Jumble));
        assert_ne!(a, story_seed(2, "s1", PerturbationKind::Jumble));
    }
}
