//! Thin command-line front end over [`deltascore::run`].
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 backend/service
//! error. Every flag can also come from a TOML config file (`--config`);
//! explicit flags win.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use deltascore::llm::ServiceConfig;
use deltascore::perturb::PerturbationKind;
use deltascore::replay::ReplayMode;
use deltascore::run::{
    cmd_correlate, cmd_delta, cmd_perturb, cmd_train_lm, AuxPaths, CorrelateArgs, DeltaArgs,
    PerturbArgs, ProfileSelection, RunError, ServiceSettings, TrainLmArgs,
};
use deltascore::scoring::BackendConfig;

#[derive(Parser)]
#[command(name = "deltascore", version, about = "Likelihood-difference story evaluation")]
struct Cli {
    /// TOML config file mirroring the flags of each subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply one perturbation to every story in a dataset.
    Perturb(PerturbCli),
    /// Train the n-gram scoring backend from a text corpus.
    TrainLm(TrainLmCli),
    /// Score likelihood deltas for a dataset under a backend.
    Delta(DeltaCli),
    /// Correlate delta scores with human ratings.
    Correlate(CorrelateCli),
}

#[derive(Args, Debug, Default)]
struct BackendFlags {
    /// Backend kind: ngram | remote.
    #[arg(long)]
    backend: Option<String>,
    /// N-gram model file (for --backend ngram).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Remote endpoint URL (for --backend remote).
    #[arg(long)]
    endpoint: Option<String>,
    /// Remote model name.
    #[arg(long)]
    model_name: Option<String>,
    /// Environment variable holding the API token.
    #[arg(long)]
    auth_env: Option<String>,
    /// Remote request timeout in seconds.
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Remote retry budget.
    #[arg(long)]
    max_retries: Option<u32>,
    /// Replay cassette for the remote backend.
    #[arg(long)]
    backend_cassette: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct ServiceFlags {
    /// Instruction-service endpoint (for service-driven perturbations).
    #[arg(long)]
    service_endpoint: Option<String>,
    /// Instruction-service model name.
    #[arg(long)]
    service_model: Option<String>,
    /// Environment variable holding the service API token.
    #[arg(long)]
    service_auth_env: Option<String>,
    /// Service cassette path.
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Cassette mode: live | record | replay.
    #[arg(long)]
    cassette_mode: Option<String>,
}

#[derive(Args, Debug)]
struct PerturbCli {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Perturbation kind (typo, subj-verb-dis, jumble, sent-reorder,
    /// rm-rel-words, story-replace, antonym, commonsense, blander-narrative).
    #[arg(long)]
    kind: Option<String>,
    /// Degree in [0, 1]; defaults to the kind's production degree.
    #[arg(long)]
    degree: Option<f64>,
    /// Global seed; per-story seeds are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Antonym lexicon TSV (for --kind antonym).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Relevant-words JSONL (for --kind rm-rel-words without a service).
    #[arg(long)]
    relevant_words: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    backend: BackendFlags,
    #[command(flatten)]
    service: ServiceFlags,
}

#[derive(Args, Debug)]
struct TrainLmCli {
    /// Training corpus: plain text, one sequence per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    order: Option<usize>,
    /// Additive smoothing constant.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DeltaCli {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Profile set: production | aspect-targeted, or use --kind.
    #[arg(long)]
    profiles: Option<String>,
    /// Single perturbation kind instead of a profile set.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    degree: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Average deltas over this many perturbation seeds per story.
    #[arg(long)]
    replicates: Option<u32>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    relevant_words: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendFlags,
    #[command(flatten)]
    service: ServiceFlags,
}

#[derive(Args, Debug)]
struct CorrelateCli {
    /// Delta-score JSONL produced by `delta`.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Rated-story JSONL dataset.
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// JSON report output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional aligned-column table output path.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Dataset label used in the report (defaults to the ratings file stem).
    #[arg(long)]
    dataset_id: Option<String>,
}

/// Config file sections mirror the subcommands; every key matches a flag.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    #[serde(default)]
    perturb: PerturbSection,
    #[serde(default)]
    train_lm: TrainLmSection,
    #[serde(default)]
    delta: DeltaSection,
    #[serde(default)]
    correlate: CorrelateSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct BackendSection {
    backend: Option<String>,
    model: Option<PathBuf>,
    endpoint: Option<String>,
    model_name: Option<String>,
    auth_env: Option<String>,
    timeout_secs: Option<u64>,
    max_retries: Option<u32>,
    backend_cassette: Option<PathBuf>,
    service_endpoint: Option<String>,
    service_model: Option<String>,
    service_auth_env: Option<String>,
    cassette: Option<PathBuf>,
    cassette_mode: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct PerturbSection {
    dataset: Option<PathBuf>,
    kind: Option<String>,
    degree: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    lexicon: Option<PathBuf>,
    relevant_words: Option<PathBuf>,
    jobs: Option<usize>,
    #[serde(flatten)]
    backend: BackendSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct TrainLmSection {
    corpus: Option<PathBuf>,
    order: Option<usize>,
    alpha: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct DeltaSection {
    dataset: Option<PathBuf>,
    profiles: Option<String>,
    kind: Option<String>,
    degree: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    replicates: Option<u32>,
    jobs: Option<usize>,
    lexicon: Option<PathBuf>,
    relevant_words: Option<PathBuf>,
    #[serde(flatten)]
    backend: BackendSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct CorrelateSection {
    scores: Option<PathBuf>,
    ratings: Option<PathBuf>,
    out: Option<PathBuf>,
    table: Option<PathBuf>,
    dataset_id: Option<String>,
}

fn load_config(path: Option<&PathBuf>) -> Result<FileConfig, RunError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| RunError::Usage(format!("--config {}: {e}", path.display())))?;
            toml::from_str(&raw)
                .map_err(|e| RunError::Usage(format!("--config {}: {e}", path.display())))
        }
    }
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T, RunError> {
    value.ok_or_else(|| RunError::Usage(format!("missing required --{flag} (flag or config)")))
}

fn parse_kind(raw: &str) -> Result<PerturbationKind, RunError> {
    raw.parse()
        .map_err(|_| RunError::Usage(format!("unknown perturbation kind '{raw}'")))
}

fn parse_mode(raw: &str) -> Result<ReplayMode, RunError> {
    match raw {
        "live" => Ok(ReplayMode::Live),
        "record" => Ok(ReplayMode::Record),
        "replay" => Ok(ReplayMode::Replay),
        other => Err(RunError::Usage(format!(
            "unknown cassette mode '{other}' (live | record | replay)"
        ))),
    }
}

fn backend_config(flags: &BackendFlags, section: &BackendSection) -> Result<Option<BackendConfig>, RunError> {
    let kind = flags.backend.clone().or_else(|| section.backend.clone());
    let Some(kind) = kind else { return Ok(None) };
    match kind.as_str() {
        "ngram" => {
            let model = require(flags.model.clone().or_else(|| section.model.clone()), "model")?;
            // order/alpha live in the model file; placeholders satisfy validation
            Ok(Some(BackendConfig::NGram {
                order: 1,
                alpha: 1.0,
                model: model.display().to_string(),
            }))
        }
        "remote" => {
            let endpoint = require(
                flags.endpoint.clone().or_else(|| section.endpoint.clone()),
                "endpoint",
            )?;
            let model = require(
                flags.model_name.clone().or_else(|| section.model_name.clone()),
                "model-name",
            )?;
            Ok(Some(BackendConfig::RemoteLogprob {
                endpoint,
                model,
                auth_env: flags.auth_env.clone().or_else(|| section.auth_env.clone()),
                timeout_secs: flags
                    .timeout_secs
                    .or(section.timeout_secs)
                    .unwrap_or(30),
                max_retries: flags.max_retries.or(section.max_retries).unwrap_or(3),
                cassette: flags
                    .backend_cassette
                    .clone()
                    .or_else(|| section.backend_cassette.clone())
                    .map(|p| p.display().to_string()),
            }))
        }
        other => Err(RunError::Usage(format!(
            "unknown backend '{other}' (ngram | remote)"
        ))),
    }
}

fn service_settings(flags: &ServiceFlags, section: &BackendSection) -> Result<Option<ServiceSettings>, RunError> {
    let endpoint = flags
        .service_endpoint
        .clone()
        .or_else(|| section.service_endpoint.clone());
    let cassette = flags.cassette.clone().or_else(|| section.cassette.clone());
    if endpoint.is_none() && cassette.is_none() {
        return Ok(None);
    }
    let mode = match flags
        .cassette_mode
        .clone()
        .or_else(|| section.cassette_mode.clone())
    {
        Some(raw) => parse_mode(&raw)?,
        None if cassette.is_some() => ReplayMode::Replay,
        None => ReplayMode::Live,
    };
    Ok(Some(ServiceSettings {
        config: ServiceConfig {
            endpoint: endpoint.unwrap_or_default(),
            model: flags
                .service_model
                .clone()
                .or_else(|| section.service_model.clone())
                .unwrap_or_else(|| "instruction-model".into()),
            auth_env: flags
                .service_auth_env
                .clone()
                .or_else(|| section.service_auth_env.clone()),
            ..ServiceConfig::default()
        },
        cassette,
        mode,
    }))
}

fn run(cli: Cli) -> Result<(), RunError> {
    let config = load_config(cli.config.as_ref())?;
    match cli.command {
        Command::Perturb(flags) => {
            let section = config.perturb;
            let kind = parse_kind(&require(
                flags.kind.clone().or_else(|| section.kind.clone()),
                "kind",
            )?)?;
            let args = PerturbArgs {
                dataset: require(
                    flags.dataset.clone().or_else(|| section.dataset.clone()),
                    "dataset",
                )?,
                kind,
                degree: flags.degree.or(section.degree),
                seed: flags.seed.or(section.seed).unwrap_or(0),
                out: require(flags.out.clone().or_else(|| section.out.clone()), "out")?,
                aux: AuxPaths {
                    antonym_lexicon: flags.lexicon.clone().or_else(|| section.lexicon.clone()),
                    relevant_words: flags
                        .relevant_words
                        .clone()
                        .or_else(|| section.relevant_words.clone()),
                    service: service_settings(&flags.service, &section.backend)?,
                },
                backend: backend_config(&flags.backend, &section.backend)?,
                jobs: if flags.jobs != 1 {
                    flags.jobs
                } else {
                    section.jobs.unwrap_or(1)
                },
            };
            let count = cmd_perturb(&args)?;
            eprintln!("perturbed {count} stories -> {}", args.out.display());
            Ok(())
        }
        Command::TrainLm(flags) => {
            let section = config.train_lm;
            let args = TrainLmArgs {
                corpus: require(
                    flags.corpus.clone().or_else(|| section.corpus.clone()),
                    "corpus",
                )?,
                order: flags.order.or(section.order).unwrap_or(2),
                alpha: flags.alpha.or(section.alpha).unwrap_or(1.0),
                out: require(flags.out.clone().or_else(|| section.out.clone()), "out")?,
            };
            let model = cmd_train_lm(&args)?;
            eprintln!(
                "trained order-{} model (vocab {}) -> {}",
                args.order,
                model.vocab_size(),
                args.out.display()
            );
            Ok(())
        }
        Command::Delta(flags) => {
            let section = config.delta;
            let profiles = match (
                flags.kind.clone().or_else(|| section.kind.clone()),
                flags
                    .profiles
                    .clone()
                    .or_else(|| section.profiles.clone())
                    .as_deref(),
            ) {
                (Some(kind), _) => {
                    ProfileSelection::Single(parse_kind(&kind)?, flags.degree.or(section.degree))
                }
                (None, Some("production") | None) => ProfileSelection::Production,
                (None, Some("aspect-targeted")) => ProfileSelection::AspectTargeted,
                (None, Some(other)) => {
                    return Err(RunError::Usage(format!(
                        "unknown profile set '{other}' (production | aspect-targeted)"
                    )))
                }
            };
            let backend = require(
                backend_config(&flags.backend, &section.backend)?,
                "backend",
            )?;
            let args = DeltaArgs {
                dataset: require(
                    flags.dataset.clone().or_else(|| section.dataset.clone()),
                    "dataset",
                )?,
                backend,
                profiles,
                seed: flags.seed.or(section.seed).unwrap_or(0),
                out: require(flags.out.clone().or_else(|| section.out.clone()), "out")?,
                replicates: flags.replicates.or(section.replicates).unwrap_or(1),
                jobs: if flags.jobs != 1 {
                    flags.jobs
                } else {
                    section.jobs.unwrap_or(1)
                },
                aux: AuxPaths {
                    antonym_lexicon: flags.lexicon.clone().or_else(|| section.lexicon.clone()),
                    relevant_words: flags
                        .relevant_words
                        .clone()
                        .or_else(|| section.relevant_words.clone()),
                    service: service_settings(&flags.service, &section.backend)?,
                },
            };
            let results = cmd_delta(&args)?;
            eprintln!("scored {} delta records -> {}", results.len(), args.out.display());
            Ok(())
        }
        Command::Correlate(flags) => {
            let section = config.correlate;
            let args = CorrelateArgs {
                scores: require(
                    flags.scores.clone().or_else(|| section.scores.clone()),
                    "scores",
                )?,
                ratings: require(
                    flags.ratings.clone().or_else(|| section.ratings.clone()),
                    "ratings",
                )?,
                out: require(flags.out.clone().or_else(|| section.out.clone()), "out")?,
                table: flags.table.clone().or_else(|| section.table.clone()),
                dataset_id: flags.dataset_id.clone().or_else(|| section.dataset_id.clone()),
            };
            let document = cmd_correlate(&args)?;
            eprint!("{}", document.to_table());
            eprintln!(
                "wrote {} correlation cells -> {}",
                document.reports.len(),
                args.out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version output is a success path
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
