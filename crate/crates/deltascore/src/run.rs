//! Pipeline commands behind the CLI: perturb a dataset, train the n-gram
//! backend, score deltas, and correlate against ratings.
//!
//! Every command is deterministic given its arguments: all randomness is
//! derived from the single global seed, outputs are written atomically
//! (temp file + rename), and the run manifest is written next to every
//! output so a run can be reconstructed from its artifacts alone.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delta::{delta_score_replicated, story_seed, DeltaResult};
use crate::eval::{correlate, ingest_dataset, EvalError, IngestError, RatedStory};
use crate::llm::{ServiceClient, ServiceConfig};
use crate::perturb::{
    self, production_specs, AntonymLexicon, Aspect, PerturbContext, PerturbError,
    PerturbationKind, PerturbationSpec,
};
use crate::replay::{Cassette, ReplayMode};
use crate::report::{ReportDocument, SkippedCell};
use crate::scoring::{BackendConfig, NGramModel, RemoteBackend, RemoteConfig, ScoringBackend, ScoringError};
use crate::text::ConditionedStory;

/// Process exit codes: 0 success, 1 usage, 2 data, 3 backend/service.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("backend: {0}")]
    Backend(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => 1,
            RunError::Data(_) => 2,
            RunError::Backend(_) => 3,
        }
    }
}

impl From<IngestError> for RunError {
    fn from(e: IngestError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<ScoringError> for RunError {
    fn from(e: ScoringError) -> Self {
        RunError::Backend(e.to_string())
    }
}

fn perturb_error(e: &PerturbError) -> RunError {
    match e {
        PerturbError::InvalidSpec(m) => RunError::Usage(m.clone()),
        PerturbError::MissingAux(m) => RunError::Usage(m.clone()),
        PerturbError::Scoring(inner) => RunError::Backend(inner.to_string()),
        PerturbError::Service(inner) => RunError::Backend(inner.to_string()),
        other => RunError::Data(other.to_string()),
    }
}

/// Write a file atomically: temp sibling + rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), RunError> {
    let io_err = |e: std::io::Error| RunError::Data(format!("writing {}: {e}", path.display()));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp).map_err(io_err)?;
        file.write_all(contents.as_bytes()).map_err(io_err)?;
        file.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Reconstruction record written verbatim next to every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub global_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profiles: Vec<PerturbationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub out: String,
    pub replicates: u32,
    pub jobs: usize,
}

impl RunManifest {
    fn write_next_to(&self, out: &Path) -> Result<(), RunError> {
        let body = toml::to_string_pretty(self)
            .map_err(|e| RunError::Data(format!("manifest serialization: {e}")))?;
        let mut manifest_path = out.as_os_str().to_owned();
        manifest_path.push(".manifest.toml");
        write_atomic(Path::new(&manifest_path), &body)
    }
}

/// Auxiliary resources resolved from CLI flags.
#[derive(Debug, Default, Clone)]
pub struct AuxPaths {
    pub antonym_lexicon: Option<PathBuf>,
    /// JSONL of `{"id": ..., "words": [...]}` per story.
    pub relevant_words: Option<PathBuf>,
    pub service: Option<ServiceSettings>,
}

#[derive(Debug, Clone)]
pub struct ServiceSettings {
    pub config: ServiceConfig,
    pub cassette: Option<PathBuf>,
    pub mode: ReplayMode,
}

#[derive(Debug, Deserialize)]
struct RelevantWordsRecord {
    id: String,
    words: Vec<String>,
}

fn load_relevant_words(path: &Path) -> Result<BTreeMap<String, std::collections::BTreeSet<String>>, RunError> {
    let raw = fs::read_to_string(path)
        .map_err(|e| RunError::Data(format!("reading {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RelevantWordsRecord = serde_json::from_str(line)
            .map_err(|e| RunError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        map.insert(
            record.id,
            record.words.into_iter().map(|w| w.to_lowercase()).collect(),
        );
    }
    Ok(map)
}

/// Holds loaded aux resources for the lifetime of a command.
pub struct LoadedAux {
    antonyms: Option<AntonymLexicon>,
    relevant_words: Option<BTreeMap<String, std::collections::BTreeSet<String>>>,
    client: Option<ServiceClient>,
}

impl LoadedAux {
    pub fn load(paths: &AuxPaths) -> Result<Self, RunError> {
        let antonyms = match &paths.antonym_lexicon {
            Some(path) => Some(
                AntonymLexicon::load(path).map_err(|e| RunError::Data(e.to_string()))?,
            ),
            None => None,
        };
        let relevant_words = match &paths.relevant_words {
            Some(path) => Some(load_relevant_words(path)?),
            None => None,
        };
        let client = match &paths.service {
            Some(settings) => {
                let cassette = Cassette::open(settings.mode, settings.cassette.as_deref())
                    .map_err(|e| RunError::Backend(e.to_string()))?;
                Some(
                    ServiceClient::new(settings.config.clone(), cassette)
                        .map_err(|e| RunError::Backend(e.to_string()))?,
                )
            }
            None => None,
        };
        Ok(Self {
            antonyms,
            relevant_words,
            client,
        })
    }

    fn context<'a>(
        &'a self,
        pool: Option<&'a [ConditionedStory]>,
        backend: Option<&'a dyn ScoringBackend>,
        lookup: &'a dyn Fn(&str) -> Option<std::collections::BTreeSet<String>>,
    ) -> PerturbContext<'a> {
        PerturbContext {
            antonyms: self.antonyms.as_ref(),
            relevant_words: Some(lookup),
            pool,
            backend,
            client: self.client.as_ref(),
        }
    }
}

/// JSONL record emitted by `perturb`.
#[derive(Debug, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub id: String,
    pub kind: PerturbationKind,
    pub degree: f64,
    pub seed: u64,
    pub original: String,
    pub perturbed: String,
    pub edits: Vec<perturb::Edit>,
}

pub struct PerturbArgs {
    pub dataset: PathBuf,
    pub kind: PerturbationKind,
    pub degree: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub aux: AuxPaths,
    /// Backend for story-replace candidate selection.
    pub backend: Option<BackendConfig>,
    pub jobs: usize,
}

fn validate_degree(kind: PerturbationKind, degree: Option<f64>) -> Result<f64, RunError> {
    let degree = degree.unwrap_or_else(|| perturb::production_degree(kind));
    if !(0.0..=1.0).contains(&degree) {
        return Err(RunError::Usage(format!("--degree {degree} outside [0, 1]")));
    }
    if !kind.degree_controlled() && degree != 1.0 {
        return Err(RunError::Usage(format!(
            "--kind {kind} takes no degree (or degree 1.0)"
        )));
    }
    Ok(degree)
}

/// Build a scoring backend from its config.
pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn ScoringBackend>, RunError> {
    config.validate()?;
    match config {
        BackendConfig::NGram { model, .. } => {
            let model = NGramModel::load(Path::new(model))?;
            Ok(Box::new(model))
        }
        BackendConfig::RemoteLogprob {
            endpoint,
            model,
            auth_env,
            timeout_secs,
            max_retries,
            cassette,
        } => {
            let mode = if cassette.is_some() {
                ReplayMode::Replay
            } else {
                ReplayMode::Live
            };
            let cassette = Cassette::open(mode, cassette.as_ref().map(Path::new))
                .map_err(|e| RunError::Backend(e.to_string()))?;
            let backend = RemoteBackend::new(
                RemoteConfig {
                    endpoint: endpoint.clone(),
                    model: model.clone(),
                    auth_env: auth_env.clone(),
                    timeout_secs: *timeout_secs,
                    max_retries: *max_retries,
                },
                cassette,
            )?;
            Ok(Box::new(backend))
        }
    }
}

fn load_stories(path: &Path) -> Result<Vec<RatedStory>, RunError> {
    Ok(ingest_dataset(path)?)
}

/// Pool for story-replace: every other dataset story with a different
/// condition.
fn replace_pool(stories: &[RatedStory], target: &ConditionedStory) -> Vec<ConditionedStory> {
    stories
        .iter()
        .map(|r| &r.story)
        .filter(|s| s.id != target.id && s.condition != target.condition)
        .cloned()
        .collect()
}

pub fn cmd_perturb(args: &PerturbArgs) -> Result<usize, RunError> {
    let degree = validate_degree(args.kind, args.degree)?;
    let stories = load_stories(&args.dataset)?;
    let aux = LoadedAux::load(&args.aux)?;
    let backend = match &args.backend {
        Some(config) => Some(build_backend(config)?),
        None => None,
    };

    let mut lines = Vec::with_capacity(stories.len());
    for rated in &stories {
        let story = &rated.story;
        let seed = story_seed(args.seed, &story.id, args.kind);
        let spec = PerturbationSpec::new(args.kind, degree, seed)
            .map_err(|e| perturb_error(&e))?;
        let pool = if args.kind == PerturbationKind::StoryReplace {
            Some(replace_pool(&stories, story))
        } else {
            None
        };
        let lookup = |id: &str| {
            aux.relevant_words
                .as_ref()
                .and_then(|map| map.get(id).cloned())
        };
        let ctx = aux.context(pool.as_deref(), backend.as_deref(), &lookup);
        let perturbed = perturb::apply(story, &spec, &ctx).map_err(|e| {
            let mapped = perturb_error(&e);
            match mapped {
                RunError::Usage(m) => RunError::Usage(m),
                RunError::Data(m) => RunError::Data(format!("story '{}': {m}", story.id)),
                RunError::Backend(m) => RunError::Backend(format!("story '{}': {m}", story.id)),
            }
        })?;
        let record = PerturbationRecord {
            id: story.id.clone(),
            kind: args.kind,
            degree,
            seed,
            original: story.story.clone(),
            perturbed: perturbed.perturbed,
            edits: perturbed.edits,
        };
        lines.push(serde_json::to_string(&record).expect("record serializes"));
    }
    let body = lines.join("\n") + "\n";
    write_atomic(&args.out, &body)?;
    RunManifest {
        command: "perturb".into(),
        global_seed: args.seed,
        backend: args.backend.clone(),
        profiles: vec![PerturbationSpec::new(args.kind, degree, args.seed)
            .map_err(|e| perturb_error(&e))?],
        dataset: Some(args.dataset.display().to_string()),
        out: args.out.display().to_string(),
        replicates: 1,
        jobs: args.jobs,
    }
    .write_next_to(&args.out)?;
    Ok(stories.len())
}

pub struct TrainLmArgs {
    pub corpus: PathBuf,
    pub order: usize,
    pub alpha: f64,
    pub out: PathBuf,
}

pub fn cmd_train_lm(args: &TrainLmArgs) -> Result<NGramModel, RunError> {
    if args.order < 1 {
        return Err(RunError::Usage("--order must be >= 1".into()));
    }
    if args.alpha <= 0.0 {
        return Err(RunError::Usage("--alpha must be > 0".into()));
    }
    let raw = fs::read_to_string(&args.corpus)
        .map_err(|e| RunError::Data(format!("reading {}: {e}", args.corpus.display())))?;
    let model = NGramModel::train_from_text(&raw, args.order, args.alpha)
        .map_err(|e| RunError::Data(e.to_string()))?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| RunError::Data(format!("creating {}: {e}", parent.display())))?;
        }
    }
    model.save(&args.out)?;
    Ok(model)
}

/// Which perturbations a delta run applies.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSelection {
    /// typo@0.4, jumble@0.9, antonym@0.8.
    Production,
    /// One perturbation per aspect.
    AspectTargeted,
    /// A single kind at an explicit degree.
    Single(PerturbationKind, Option<f64>),
}

pub struct DeltaArgs {
    pub dataset: PathBuf,
    pub backend: BackendConfig,
    pub profiles: ProfileSelection,
    pub seed: u64,
    pub out: PathBuf,
    pub replicates: u32,
    pub jobs: usize,
    pub aux: AuxPaths,
}

fn resolve_profiles(selection: &ProfileSelection, seed: u64) -> Result<Vec<PerturbationSpec>, RunError> {
    match selection {
        ProfileSelection::Production => Ok(production_specs(seed)),
        ProfileSelection::AspectTargeted => Ok(perturb::aspect_targeted_profiles(seed)
            .map_err(|e| perturb_error(&e))?
            .into_iter()
            .map(|p| p.spec)
            .collect()),
        ProfileSelection::Single(kind, degree) => {
            let degree = validate_degree(*kind, *degree)?;
            Ok(vec![PerturbationSpec::new(*kind, degree, seed)
                .map_err(|e| perturb_error(&e))?])
        }
    }
}

pub fn cmd_delta(args: &DeltaArgs) -> Result<Vec<DeltaResult>, RunError> {
    let stories = load_stories(&args.dataset)?;
    let backend = build_backend(&args.backend)?;
    let aux = LoadedAux::load(&args.aux)?;
    let profiles = resolve_profiles(&args.profiles, args.seed)?;

    let worker = |rated: &RatedStory| -> Result<Vec<DeltaResult>, RunError> {
        let story = &rated.story;
        let mut results = Vec::with_capacity(profiles.len());
        for profile in &profiles {
            let spec = profile
                .clone()
                .with_seed(story_seed(args.seed, &story.id, profile.kind));
            let pool = if profile.kind == PerturbationKind::StoryReplace {
                Some(replace_pool(&stories, story))
            } else {
                None
            };
            let lookup = |id: &str| {
                aux.relevant_words
                    .as_ref()
                    .and_then(|map| map.get(id).cloned())
            };
            let ctx = aux.context(pool.as_deref(), Some(backend.as_ref()), &lookup);
            let result =
                delta_score_replicated(story, &spec, backend.as_ref(), &ctx, args.replicates)
                    .map_err(|e| match e {
                        crate::delta::DeltaError::Perturb { id, source } => {
                            let mapped = perturb_error(&source);
                            match mapped {
                                RunError::Usage(m) => RunError::Usage(m),
                                RunError::Data(m) => RunError::Data(format!("story '{id}': {m}")),
                                RunError::Backend(m) => {
                                    RunError::Backend(format!("story '{id}': {m}"))
                                }
                            }
                        }
                        other => RunError::Backend(other.to_string()),
                    })?;
            results.push(result);
        }
        Ok(results)
    };

    let nested: Vec<Vec<DeltaResult>> = if args.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| RunError::Backend(format!("thread pool: {e}")))?;
        pool.install(|| stories.par_iter().map(worker).collect::<Result<_, _>>())?
    } else {
        stories.iter().map(worker).collect::<Result<_, _>>()?
    };
    let results: Vec<DeltaResult> = nested.into_iter().flatten().collect();

    let body = results
        .iter()
        .map(|r| serde_json::to_string(r).expect("result serializes"))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n";
    write_atomic(&args.out, &body)?;
    RunManifest {
        command: "delta".into(),
        global_seed: args.seed,
        backend: Some(args.backend.clone()),
        profiles,
        dataset: Some(args.dataset.display().to_string()),
        out: args.out.display().to_string(),
        replicates: args.replicates,
        jobs: args.jobs,
    }
    .write_next_to(&args.out)?;
    Ok(results)
}

pub struct CorrelateArgs {
    pub scores: PathBuf,
    pub ratings: PathBuf,
    pub out: PathBuf,
    /// Optional text-table output path.
    pub table: Option<PathBuf>,
    pub dataset_id: Option<String>,
}

pub fn cmd_correlate(args: &CorrelateArgs) -> Result<ReportDocument, RunError> {
    let raw = fs::read_to_string(&args.scores)
        .map_err(|e| RunError::Data(format!("reading {}: {e}", args.scores.display())))?;
    let mut by_metric: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: DeltaResult = serde_json::from_str(line).map_err(|e| {
            RunError::Data(format!("{} line {}: {e}", args.scores.display(), i + 1))
        })?;
        by_metric
            .entry(record.metric_id())
            .or_default()
            .insert(record.id.clone(), record.delta);
    }
    if by_metric.is_empty() {
        return Err(RunError::Data(format!(
            "{} contains no score records",
            args.scores.display()
        )));
    }
    let rated = load_stories(&args.ratings)?;
    let rated_ids: std::collections::BTreeSet<&str> =
        rated.iter().map(|r| r.story.id.as_str()).collect();
    let mut orphans: Vec<String> = by_metric
        .values()
        .flat_map(|scores| scores.keys())
        .filter(|id| !rated_ids.contains(id.as_str()))
        .cloned()
        .collect();
    orphans.sort();
    orphans.dedup();
    if !orphans.is_empty() {
        let shown: Vec<String> = orphans.iter().take(10).cloned().collect();
        return Err(RunError::Data(format!(
            "{} score id(s) have no rated story, first {}: {}",
            orphans.len(),
            shown.len(),
            shown.join(", ")
        )));
    }

    let dataset_id = args
        .dataset_id
        .clone()
        .unwrap_or_else(|| {
            args.ratings
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        });
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for (metric, scores) in &by_metric {
        for aspect in Aspect::ALL {
            match correlate(scores, &rated, aspect, metric, &dataset_id) {
                Ok(report) => reports.push(report),
                Err(EvalError::InsufficientData { usable }) => skipped.push(SkippedCell {
                    metric: metric.clone(),
                    aspect,
                    reason: format!("insufficient data ({usable} usable)"),
                }),
                Err(EvalError::UndefinedCorrelation) => skipped.push(SkippedCell {
                    metric: metric.clone(),
                    aspect,
                    reason: "undefined: fully tied".into(),
                }),
                Err(e) => return Err(RunError::Data(e.to_string())),
            }
        }
    }
    let document = ReportDocument {
        dataset: dataset_id,
        reports,
        skipped,
    };
    write_atomic(&args.out, &document.to_json())?;
    if let Some(table_path) = &args.table {
        write_atomic(table_path, &document.to_table())?;
    }
    Ok(document)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(RunError::Usage("x".into()).exit_code(), 1);
        assert_eq!(RunError::Data("x".into()).exit_code(), 2);
        assert_eq!(RunError::Backend("x".into()).exit_code(), 3);
    }

    #[test]
    fn degree_validation() {
        assert!(validate_degree(PerturbationKind::Jumble, Some(1.5)).is_err());
        assert!(validate_degree(PerturbationKind::Jumble, Some(-0.1)).is_err());
        assert_eq!(validate_degree(PerturbationKind::Jumble, None).unwrap(), 0.9);
        assert_eq!(validate_degree(PerturbationKind::Typo, None).unwrap(), 0.4);
        assert!(validate_degree(PerturbationKind::SentReorder, Some(0.5)).is_err());
        assert_eq!(
            validate_degree(PerturbationKind::SentReorder, None).unwrap(),
            1.0
        );
    }

    #[test]
    fn atomic_write_creates_parents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/deep/file.txt");
        write_atomic(&path, "content").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "content");
    }
}
