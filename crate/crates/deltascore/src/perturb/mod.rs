//! Aspect-targeted story perturbations.
//!
//! Every perturbation is a deterministic function of `(story, spec)` except
//! the service-backed ones (`commonsense`, `blander-narrative`), which defer
//! to an external instruction-following model and are made reproducible via
//! the record/replay cassette in [`crate::llm`].
//!
//! A perturbation never fails just because it has nothing to do: when the
//! output provably equals the input, the result carries the `noop` flag and
//! the downstream likelihood difference is forced to zero.

mod lexicon;
mod profiles;

pub use lexicon::AntonymLexicon;
pub use profiles::{
    aspect_of, aspect_targeted_profiles, production_degree, production_specs, Aspect,
    AspectProfile,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ServiceClient, ServiceError, TemplateId};
use crate::rng::SeededRng;
use crate::scoring::{ScoringBackend, ScoringError};
use crate::text::{detokenize, tokenize, ConditionedStory, TextError};

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("invalid perturbation spec: {0}")]
    InvalidSpec(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate perturbation: {0}")]
    Degenerate(String),
    #[error("missing auxiliary resource: {0}")]
    MissingAux(String),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("service perturbation failed: {0}")]
    Service(#[from] ServiceError),
}

/// The nine perturbation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    Typo,
    SubjVerbDis,
    Jumble,
    SentReorder,
    RmRelWords,
    StoryReplace,
    Antonym,
    Commonsense,
    BlanderNarrative,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 9] = [
        PerturbationKind::Typo,
        PerturbationKind::SubjVerbDis,
        PerturbationKind::Jumble,
        PerturbationKind::SentReorder,
        PerturbationKind::RmRelWords,
        PerturbationKind::StoryReplace,
        PerturbationKind::Antonym,
        PerturbationKind::Commonsense,
        PerturbationKind::BlanderNarrative,
    ];

    /// Kinds whose intensity is controlled by `degree`; the rest are all-or-nothing.
    pub fn degree_controlled(self) -> bool {
        matches!(
            self,
            PerturbationKind::Typo | PerturbationKind::Jumble | PerturbationKind::Antonym
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::Typo => "typo",
            PerturbationKind::SubjVerbDis => "subj-verb-dis",
            PerturbationKind::Jumble => "jumble",
            PerturbationKind::SentReorder => "sent-reorder",
            PerturbationKind::RmRelWords => "rm-rel-words",
            PerturbationKind::StoryReplace => "story-replace",
            PerturbationKind::Antonym => "antonym",
            PerturbationKind::Commonsense => "commonsense",
            PerturbationKind::BlanderNarrative => "blander-narrative",
        }
    }
}

impl std::fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PerturbationKind {
    type Err = PerturbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| PerturbError::InvalidSpec(format!("unknown perturbation kind '{s}'")))
    }
}

/// Handle to a kind-specific auxiliary resource, as recorded in manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuxRef {
    AntonymLexicon(String),
    RelevantWords(String),
    CandidatePool(String),
    Template(TemplateId),
}

/// Fully determines one perturbed output: kind, degree in `[0, 1]`, seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub degree: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<AuxRef>,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, degree: f64, seed: u64) -> Result<Self, PerturbError> {
        if !(0.0..=1.0).contains(&degree) {
            return Err(PerturbError::InvalidSpec(format!(
                "degree {degree} out of [0, 1]"
            )));
        }
        if !kind.degree_controlled() && degree != 1.0 {
            return Err(PerturbError::InvalidSpec(format!(
                "perturbation '{kind}' takes no degree; require 1.0, got {degree}"
            )));
        }
        Ok(Self {
            kind,
            degree,
            seed,
            aux: None,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_aux(mut self, aux: AuxRef) -> Self {
        self.aux = Some(aux);
        self
    }

    /// Row label used in reports, e.g. `jumble@0.9`.
    pub fn metric_id(&self) -> String {
        if self.kind.degree_controlled() {
            format!("{}@{}", self.kind, self.degree)
        } else {
            self.kind.to_string()
        }
    }
}

/// One applied edit, with enough detail to audit the transformation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub op: String,
    pub position: usize,
    pub before: String,
    pub after: String,
}

impl Edit {
    fn new(op: &str, position: usize, before: impl Into<String>, after: impl Into<String>) -> Self {
        Self {
            op: op.to_string(),
            position,
            before: before.into(),
            after: after.into(),
        }
    }
}

/// A perturbed story plus the edit log that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedStory {
    pub id: String,
    pub perturbed: String,
    pub spec: PerturbationSpec,
    pub edits: Vec<Edit>,
    /// Output provably equals the input.
    pub noop: bool,
}

impl PerturbedStory {
    fn finish(story: &ConditionedStory, spec: &PerturbationSpec, perturbed: String, edits: Vec<Edit>) -> Self {
        let noop = perturbed == story.story;
        Self {
            id: story.id.clone(),
            perturbed,
            spec: spec.clone(),
            edits,
            noop,
        }
    }

    fn noop(story: &ConditionedStory, spec: &PerturbationSpec, reason: &str) -> Self {
        Self {
            id: story.id.clone(),
            perturbed: story.story.clone(),
            spec: spec.clone(),
            edits: vec![Edit::new("noop", 0, reason, "")],
            noop: true,
        }
    }
}

/// Splice replacements (token span -> new text) back into the source,
/// leaving everything between the spans byte-identical.
fn splice(source: &str, replacements: &[((usize, usize), String)]) -> String {
    let mut out = String::with_capacity(source.len());
    let mut cursor = 0;
    for ((start, end), text) in replacements {
        out.push_str(&source[cursor..*start]);
        out.push_str(text);
        cursor = *end;
    }
    out.push_str(&source[cursor..]);
    out
}

fn typo_eligible(token: &str) -> bool {
    token.chars().count() >= 2 && token.chars().any(|c| c.is_alphabetic())
}

/// Transpose one adjacent character pair in `round(degree * W)` eligible
/// tokens, chosen uniformly without replacement.
///
/// Draw order: a partial Fisher-Yates over the eligible-token list selects
/// the edited tokens (`k` picks), then one pick per edited token (in story
/// order) chooses the transposition point.
pub fn perturb_typo(
    story: &ConditionedStory,
    degree: f64,
    seed: u64,
) -> Result<PerturbedStory, PerturbError> {
    let spec = PerturbationSpec::new(PerturbationKind::Typo, degree, seed)?;
    let tokens = tokenize(&story.story)?;
    let eligible: Vec<usize> = (0..tokens.tokens.len())
        .filter(|&i| typo_eligible(&tokens.tokens[i].text))
        .collect();
    if eligible.is_empty() {
        return Ok(PerturbedStory::noop(story, &spec, "no token eligible for a typo"));
    }
    let count = (degree * eligible.len() as f64).round() as usize;
    if count == 0 {
        return Ok(PerturbedStory {
            edits: Vec::new(),
            ..PerturbedStory::noop(story, &spec, "")
        });
    }

    let mut rng = SeededRng::new(seed);
    let mut pool = eligible;
    for i in 0..count {
        let j = i + rng.pick(pool.len() - i);
        pool.swap(i, j);
    }
    let mut selected = pool[..count].to_vec();
    selected.sort_unstable();

    let mut edits = Vec::with_capacity(count);
    let mut replacements = Vec::with_capacity(count);
    for idx in selected {
        let token = &tokens.tokens[idx];
        let mut chars: Vec<char> = token.text.chars().collect();
        let pos = rng.pick(chars.len() - 1);
        chars.swap(pos, pos + 1);
        let after: String = chars.into_iter().collect();
        edits.push(Edit::new("transpose", idx, token.text.clone(), after.clone()));
        replacements.push((token.span, after));
    }
    let perturbed = splice(&story.story, &replacements);
    Ok(PerturbedStory::finish(story, &spec, perturbed, edits))
}

/// Flip every recognized verb form across the agreement boundary.
pub fn perturb_subj_verb(story: &ConditionedStory, seed: u64) -> Result<PerturbedStory, PerturbError> {
    let spec = PerturbationSpec::new(PerturbationKind::SubjVerbDis, 1.0, seed)?;
    let tokens = tokenize(&story.story)?;
    let mut edits = Vec::new();
    let mut replacements = Vec::new();
    for (i, token) in tokens.tokens.iter().enumerate() {
        let prev = i.checked_sub(1).map(|p| tokens.tokens[p].text.as_str());
        if let Some(flipped) = lexicon::disagree(&token.text, prev) {
            edits.push(Edit::new("flip", i, token.text.clone(), flipped.clone()));
            replacements.push((token.span, flipped));
        }
    }
    if edits.is_empty() {
        return Ok(PerturbedStory::noop(story, &spec, "no recognized verb form"));
    }
    let perturbed = splice(&story.story, &replacements);
    Ok(PerturbedStory::finish(story, &spec, perturbed, edits))
}

/// Shuffle words within consecutive spans of length `max(2, round(degree * m))`.
/// Degree 1.0 shuffles the whole story as one span.
pub fn perturb_jumble(
    story: &ConditionedStory,
    degree: f64,
    seed: u64,
) -> Result<PerturbedStory, PerturbError> {
    let spec = PerturbationSpec::new(PerturbationKind::Jumble, degree, seed)?;
    let tokens = tokenize(&story.story)?;
    let texts: Vec<String> = tokens.tokens.iter().map(|t| t.text.clone()).collect();
    let m = texts.len();
    if m < 2 {
        return Ok(PerturbedStory::noop(story, &spec, "single-token story"));
    }
    let span_len = ((degree * m as f64).round() as usize).max(2);

    let mut rng = SeededRng::new(seed);
    let mut shuffled = texts.clone();
    let mut edits = Vec::new();
    let mut start = 0;
    while start < m {
        let end = (start + span_len).min(m);
        rng.shuffle(&mut shuffled[start..end]);
        edits.push(Edit::new(
            "shuffle",
            start,
            detokenize(&texts[start..end]),
            detokenize(&shuffled[start..end]),
        ));
        start = end;
    }
    let perturbed = detokenize(&shuffled);
    Ok(PerturbedStory::finish(story, &spec, perturbed, edits))
}

/// Reorder whole sentences with a uniform random permutation, resampling
/// identity once (for two sentences the only alternative is the swap).
pub fn perturb_sent_reorder(story: &ConditionedStory, seed: u64) -> Result<PerturbedStory, PerturbError> {
    let spec = PerturbationSpec::new(PerturbationKind::SentReorder, 1.0, seed)?;
    let tokens = tokenize(&story.story)?;
    let n = tokens.sentences.len();
    if n < 2 {
        return Ok(PerturbedStory::noop(story, &spec, "story has a single sentence"));
    }
    let mut rng = SeededRng::new(seed);
    let identity: Vec<usize> = (0..n).collect();
    let mut perm = rng.permutation(n);
    if perm == identity {
        perm = if n == 2 { vec![1, 0] } else { rng.permutation(n) };
    }
    let texts = tokens.token_texts();
    let mut reordered: Vec<&str> = Vec::with_capacity(texts.len());
    for &s in &perm {
        let (lo, hi) = tokens.sentences[s];
        reordered.extend_from_slice(&texts[lo..hi]);
    }
    let order = |p: &[usize]| {
        p.iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let edits = vec![Edit::new("reorder", 0, order(&identity), order(&perm))];
    let perturbed = detokenize(&reordered);
    Ok(PerturbedStory::finish(story, &spec, perturbed, edits))
}

/// Delete every token whose case-folded form is in the relevant-word set.
pub fn perturb_rm_rel_words(
    story: &ConditionedStory,
    relevant_words: &BTreeSet<String>,
    seed: u64,
) -> Result<PerturbedStory, PerturbError> {
    let spec = PerturbationSpec::new(PerturbationKind::RmRelWords, 1.0, seed)?;
    if relevant_words.is_empty() {
        return Err(PerturbError::InvalidInput("relevant-word set is empty".into()));
    }
    let tokens = tokenize(&story.story)?;
    let mut kept = Vec::new();
    let mut edits = Vec::new();
    for (i, token) in tokens.tokens.iter().enumerate() {
        if relevant_words.contains(&token.text.to_lowercase()) {
            edits.push(Edit::new("delete", i, token.text.clone(), ""));
        } else {
            kept.push(token.text.as_str());
        }
    }
    if edits.is_empty() {
        return Ok(PerturbedStory::noop(story, &spec, "no token matches the relevant-word set"));
    }
    if kept.is_empty() {
        return Err(PerturbError::Degenerate(
            "removing relevant words would empty the story".into(),
        ));
    }
    let perturbed = detokenize(&kept);
    Ok(PerturbedStory::finish(story, &spec, perturbed, edits))
}

/// Substitute the story with the pool candidate whose unconditional mean
/// log-likelihood is closest to the original's; ties break on the
/// lexicographically smallest candidate id.
pub fn perturb_story_replace(
    story: &ConditionedStory,
    pool: &[ConditionedStory],
    backend: &dyn ScoringBackend,
    seed: u64,
) -> Result<PerturbedStory, PerturbError> {
    let spec = PerturbationSpec::new(PerturbationKind::StoryReplace, 1.0, seed)?;
    if pool.is_empty() {
        return Err(PerturbError::InvalidInput("candidate pool is empty".into()));
    }
    let original_mean = backend.score("", &story.story)?.mean_logprob;
    let mut best: Option<(f64, &ConditionedStory)> = None;
    for candidate in pool {
        let mean = backend.score("", &candidate.story)?.mean_logprob;
        let distance = (mean - original_mean).abs();
        let better = match best {
            None => true,
            Some((best_distance, best_story)) => {
                distance < best_distance
                    || (distance == best_distance && candidate.id < best_story.id)
            }
        };
        if better {
            best = Some((distance, candidate));
        }
    }
    let (_, chosen) = best.expect("non-empty pool");
    let edits = vec![
        Edit::new("select-candidate", 0, "", chosen.id.clone()),
        Edit::new("replace-story", 0, story.story.clone(), chosen.story.clone()),
    ];
    Ok(PerturbedStory::finish(story, &spec, chosen.story.clone(), edits))
}

/// Replace each token that has a lexicon entry with its first listed
/// antonym, independently with probability `degree`. One uniform draw is
/// consumed per eligible token, fired or not.
pub fn perturb_antonym(
    story: &ConditionedStory,
    degree: f64,
    seed: u64,
    lexicon: &AntonymLexicon,
) -> Result<PerturbedStory, PerturbError> {
    let spec = PerturbationSpec::new(PerturbationKind::Antonym, degree, seed)?;
    let tokens = tokenize(&story.story)?;
    let mut rng = SeededRng::new(seed);
    let mut edits = Vec::new();
    let mut replacements = Vec::new();
    let mut any_entry = false;
    for (i, token) in tokens.tokens.iter().enumerate() {
        let Some(antonym) = lexicon.antonym(&token.text) else {
            continue;
        };
        any_entry = true;
        if rng.unit() < degree {
            let cased = preserve_case(&token.text, antonym);
            edits.push(Edit::new("replace", i, token.text.clone(), cased.clone()));
            replacements.push((token.span, cased));
        }
    }
    if !any_entry {
        return Ok(PerturbedStory::noop(story, &spec, "no token has an antonym entry"));
    }
    if edits.is_empty() {
        return Ok(PerturbedStory {
            edits: Vec::new(),
            ..PerturbedStory::noop(story, &spec, "")
        });
    }
    let perturbed = splice(&story.story, &replacements);
    Ok(PerturbedStory::finish(story, &spec, perturbed, edits))
}

fn preserve_case(original: &str, replacement: &str) -> String {
    if original.chars().next().is_some_and(|c| c.is_uppercase()) {
        let mut chars = replacement.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
            None => String::new(),
        }
    } else {
        replacement.to_string()
    }
}

/// Rewrite the story through the external service using one of the fixed
/// prompt templates; the raw exchange is kept in the edit log for audit.
pub fn perturb_via_service(
    story: &ConditionedStory,
    template: TemplateId,
    client: &ServiceClient,
    seed: u64,
) -> Result<PerturbedStory, PerturbError> {
    let kind = match template {
        TemplateId::Commonsense => PerturbationKind::Commonsense,
        TemplateId::BlanderNarrative => PerturbationKind::BlanderNarrative,
        TemplateId::RelevantWords => {
            return Err(PerturbError::InvalidSpec(
                "relevant-words is a word-listing prompt, not a story rewrite; use rm-rel-words".into(),
            ))
        }
    };
    let spec = PerturbationSpec::new(kind, 1.0, seed)?.with_aux(AuxRef::Template(template));
    let prompt = crate::llm::render_prompt(template, &story.condition, &story.story)?;
    let response = client.complete(&prompt)?;
    let perturbed = response.trim().to_string();
    if perturbed.is_empty() {
        return Err(PerturbError::Degenerate("service returned an empty story".into()));
    }
    let edits = vec![Edit::new("service-request", 0, prompt, response)];
    Ok(PerturbedStory::finish(story, &spec, perturbed, edits))
}

/// Everything a perturbation might need beyond `(story, spec)`.
#[derive(Default)]
pub struct PerturbContext<'a> {
    pub antonyms: Option<&'a AntonymLexicon>,
    /// Case-folded relevant words, per story id.
    pub relevant_words: Option<&'a dyn Fn(&str) -> Option<BTreeSet<String>>>,
    pub pool: Option<&'a [ConditionedStory]>,
    pub backend: Option<&'a dyn ScoringBackend>,
    pub client: Option<&'a ServiceClient>,
}

/// Dispatch a spec to its perturbation, pulling auxiliary resources from the
/// context.
pub fn apply(
    story: &ConditionedStory,
    spec: &PerturbationSpec,
    ctx: &PerturbContext,
) -> Result<PerturbedStory, PerturbError> {
    match spec.kind {
        PerturbationKind::Typo => perturb_typo(story, spec.degree, spec.seed),
        PerturbationKind::SubjVerbDis => perturb_subj_verb(story, spec.seed),
        PerturbationKind::Jumble => perturb_jumble(story, spec.degree, spec.seed),
        PerturbationKind::SentReorder => perturb_sent_reorder(story, spec.seed),
        PerturbationKind::RmRelWords => {
            let lookup = ctx.relevant_words.ok_or_else(|| {
                PerturbError::MissingAux("rm-rel-words needs a relevant-word source".into())
            })?;
            let words = lookup(&story.id).ok_or_else(|| {
                PerturbError::InvalidInput(format!("no relevant words for story '{}'", story.id))
            })?;
            perturb_rm_rel_words(story, &words, spec.seed)
        }
        PerturbationKind::StoryReplace => {
            let pool = ctx
                .pool
                .ok_or_else(|| PerturbError::MissingAux("story-replace needs a candidate pool".into()))?;
            let backend = ctx.backend.ok_or_else(|| {
                PerturbError::MissingAux("story-replace needs an unconditional scoring backend".into())
            })?;
            perturb_story_replace(story, pool, backend, spec.seed)
        }
        PerturbationKind::Antonym => {
            let lexicon = ctx
                .antonyms
                .ok_or_else(|| PerturbError::MissingAux("antonym needs a lexicon".into()))?;
            perturb_antonym(story, spec.degree, spec.seed, lexicon)
        }
        PerturbationKind::Commonsense => {
            let client = ctx
                .client
                .ok_or_else(|| PerturbError::MissingAux("commonsense needs a service client".into()))?;
            perturb_via_service(story, TemplateId::Commonsense, client, spec.seed)
        }
        PerturbationKind::BlanderNarrative => {
            let client = ctx.client.ok_or_else(|| {
                PerturbError::MissingAux("blander-narrative needs a service client".into())
            })?;
            perturb_via_service(story, TemplateId::BlanderNarrative, client, spec.seed)
        }
    }
}
