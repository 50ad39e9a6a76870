//! The `oselect` subcommands. Each returns the JSON summary printed on
//! stdout; files go to the work directory.

use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use oselect_core::annotator_em::{evaluate, fit, FitError, FitOptions};
use oselect_core::corpus::{cluster_corpus, Corpus, CorpusError};
use oselect_core::evalsim::{
    annotation_accuracy, candidate_ceiling, fit_dataset, interaction_ceiling, noisy_crowd_evaluation, params_of,
    render_table, sample_db_ceiling, simulate_crowd, QuestionCache,
};
use oselect_core::infogain::truncate;
use oselect_core::interaction::{precompute_tree, question_seed, write_transcript, Problem, TranscriptEntry};
use oselect_core::relational::engine::Executor;
use oselect_core::response_model::ErrorModel;
use oselect_core::synth::{synthesize_with_trace, SynthConfig, SynthFailure, SynthTrace};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{AppConfig, ConfigError};
use crate::events::{EventLog, LogError};
use crate::service::{Service, ServiceError};
use crate::workdir::{self, StoreError, Trees, Workdir};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("fitting failed: {0}")]
    Fit(#[from] FitError),
    #[error("utterance `{0}` has no candidate pool")]
    NoPool(String),
    #[error("synthesis for `{utterance}` failed: {failure}")]
    Synth {
        utterance: String,
        failure: SynthFailure,
        trace: Box<SynthTrace>,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Store(_) => "store",
            CliError::Corpus(_) => "corpus",
            CliError::Service(e) => e.kind(),
            CliError::Log(_) => "event_log",
            CliError::Fit(_) => "fit",
            CliError::NoPool(_) => "no_pool",
            CliError::Synth { .. } => "synthesis",
            CliError::Io { .. } => "io",
        }
    }

    /// `{"error": {"kind", "message", ...}}`, written to stderr on failure.
    pub fn to_json(&self) -> Value {
        let mut err = json!({"kind": self.kind(), "message": self.to_string()});
        if let CliError::Synth { utterance, trace, .. } = self {
            err["utterance_id"] = json!(utterance);
            err["trace"] = serde_json::to_value(trace).unwrap_or(Value::Null);
        }
        json!({ "error": err })
    }
}

#[derive(Debug, Parser)]
#[command(name = "oselect", version, about = "Disambiguate SQL candidates by asking annotators to pick outputs")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for clustering, synthesis and simulation (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Work directory holding the pipeline's files (overrides the config).
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a corpus bundle (schemas, samples, utterances, candidates).
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Cluster every utterance's candidates by execution equivalence.
    Cluster,
    /// Synthesize one question database and print it with its search trace.
    Synth(SynthArgs),
    /// Precompute question trees within a per-utterance budget.
    Precompute {
        #[arg(long)]
        budget_secs: Option<u64>,
        #[arg(long)]
        utterance: Option<String>,
    },
    /// Simulate annotators over the whole corpus.
    Simulate(SimulateArgs),
    /// Fit annotator error rates from transcripts.
    Fit {
        /// Defaults to the work directory's transcripts.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        single_e_step: bool,
    },
    /// Run the annotation HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Write the aggregated annotations as JSON Lines.
    Export {
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub utterance: String,
    /// Response-model error rate used to score databases.
    #[arg(long)]
    pub error_rate: Option<f64>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct SimulateMode {
    /// Perfect annotator, error-free scoring.
    #[arg(long)]
    pub oracle: bool,
    /// Simulated noisy crowd with model fitting.
    #[arg(long)]
    pub noisy: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub mode: SimulateMode,
    /// Ask only the repaired sample database, once per utterance (oracle
    /// mode).
    #[arg(long, conflicts_with = "noisy")]
    pub sample_db_only: bool,
    /// Number of crowd seeds (noisy mode).
    #[arg(long)]
    pub seeds: Option<usize>,
}

impl Cli {
    pub fn app_config(&self) -> Result<AppConfig, CliError> {
        let mut cfg = AppConfig::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(w) = &self.workdir {
            cfg.workdir = w.clone();
        }
        Ok(cfg)
    }
}

fn summary<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("summaries serialize")
}

fn write_transcripts(wd: &Workdir, entries: &[TranscriptEntry]) -> Result<PathBuf, CliError> {
    let path = wd.path(workdir::TRANSCRIPTS);
    let io = |source| CliError::Io {
        context: path.display().to_string(),
        source,
    };
    let mut buf = Vec::new();
    write_transcript(&mut buf, entries).map_err(|e| CliError::Io {
        context: path.display().to_string(),
        source: std::io::Error::other(e),
    })?;
    std::fs::create_dir_all(&wd.root).map_err(io)?;
    std::fs::write(&path, buf).map_err(io)?;
    Ok(path)
}

/// Runs a non-serving command.
pub fn run(command: &Command, cfg: &AppConfig) -> Result<Value, CliError> {
    let wd = Workdir::new(&cfg.workdir);
    match command {
        Command::Ingest { corpus } => ingest(&wd, corpus),
        Command::Cluster => cluster(&wd, cfg),
        Command::Synth(args) => synth(&wd, cfg, args),
        Command::Precompute { budget_secs, utterance } => precompute(&wd, cfg, *budget_secs, utterance.as_deref()),
        Command::Simulate(args) => simulate(&wd, cfg, args),
        Command::Fit {
            transcripts,
            single_e_step,
        } => fit_command(&wd, transcripts.as_deref(), *single_e_step),
        Command::Export { out } => export(cfg, out.as_deref()),
        Command::Serve { .. } => unreachable!("serve is handled by `serve`"),
    }
}

fn ingest(wd: &Workdir, dir: &std::path::Path) -> Result<Value, CliError> {
    let corpus = Corpus::load(dir)?;
    std::fs::create_dir_all(&wd.root).map_err(|source| CliError::Io {
        context: wd.root.display().to_string(),
        source,
    })?;
    corpus.save(&wd.path(workdir::CORPUS))?;
    Ok(json!({
        "schemas": corpus.schemas.len(),
        "utterances": corpus.utterances.len(),
        "candidates": corpus.candidates.values().map(Vec::len).sum::<usize>(),
        "units": corpus.units.len(),
    }))
}

fn cluster(wd: &Workdir, cfg: &AppConfig) -> Result<Value, CliError> {
    let corpus = wd.corpus()?;
    let store = cluster_corpus(&corpus, &cfg.cluster);
    store.save(&wd.path(workdir::POOLS))?;
    let clusters: usize = store.pools.values().map(|e| e.pool.clusters.len()).sum();
    Ok(json!({
        "utterances": store.pools.len(),
        "clusters": clusters,
        "candidate_ceiling": candidate_ceiling(&corpus, &store),
    }))
}

fn synth(wd: &Workdir, cfg: &AppConfig, args: &SynthArgs) -> Result<Value, CliError> {
    let corpus = wd.corpus()?;
    let store = wd.pools()?;
    let u = corpus.utterance(&args.utterance)?;
    let entry = store
        .pools
        .get(&u.id)
        .ok_or_else(|| CliError::NoPool(u.id.clone()))?;
    let schema = corpus.schema_of(u);
    let sample = corpus.sample_of(u);
    let model = wd.model()?;
    let belief = entry.pool.prior();
    let reps = entry.pool.representatives();
    let tb = truncate(&belief, &reps, &entry.pool.neighbors, &cfg.interaction.truncation);
    let synth_cfg = SynthConfig {
        seed: question_seed(cfg.interaction.seed, &u.id, &[]),
        error_rate: args
            .error_rate
            .unwrap_or_else(|| model.error_rate("", &schema.domain_id)),
        ..cfg.interaction.synth.clone()
    };
    let (result, trace) = synthesize_with_trace(&tb, schema, sample, &synth_cfg);
    let result = result.map_err(|failure| CliError::Synth {
        utterance: u.id.clone(),
        failure,
        trace: Box::new(trace.clone()),
    })?;
    let outputs: Vec<Value> = match Executor::new(schema) {
        Ok(mut exec) => entry
            .pool
            .clusters
            .iter()
            .map(|c| {
                let out = exec.execute_on(&c.representative_sql, &result.db);
                json!({
                    "cluster": c.id.0,
                    "sql": c.representative_sql,
                    "output": out.map(|d| summary(&d)).unwrap_or_else(|e| json!({"error": e.to_string()})),
                })
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    Ok(json!({
        "utterance_id": u.id,
        "config_used": result.config_used,
        "ig_bits": result.ig_bits,
        "normal_ig_bits": result.normal_ig_bits,
        "records": result.db.tables.iter().map(|t| t.rows.len()).sum::<usize>(),
        "db": summary(&result.db),
        "outputs": outputs,
        "trace": summary(&trace),
    }))
}

fn precompute(wd: &Workdir, cfg: &AppConfig, budget_secs: Option<u64>, only: Option<&str>) -> Result<Value, CliError> {
    let corpus = wd.corpus()?;
    let store = wd.pools()?;
    let model = wd.model()?;
    let budget = Duration::from_secs(budget_secs.unwrap_or(cfg.precompute.budget_secs));
    let mut trees: Trees = wd.trees()?;
    let started = Instant::now();
    for u in &corpus.utterances {
        if only.is_some_and(|id| id != u.id) {
            continue;
        }
        let Some(entry) = store.pools.get(&u.id) else { continue };
        let schema = corpus.schema_of(u);
        let problem = Problem {
            utterance_id: &u.id,
            domain_id: &schema.domain_id,
            pool: &entry.pool,
            schema,
            sample_db: corpus.sample_of(u),
        };
        let e = model.error_rate("", &schema.domain_id);
        let tree = precompute_tree(&problem, &entry.pool.prior(), e, &cfg.interaction, budget);
        log::info!("{}: {} questions, depth {}", u.id, tree.question_count(), tree.depth());
        trees.insert(u.id.clone(), tree);
    }
    wd.write_json(workdir::TREES, &trees)?;
    log::info!("precompute took {:.1}s", started.elapsed().as_secs_f64());
    let missing = trees
        .values()
        .flat_map(|t| t.nodes.iter())
        .filter(|n| matches!(n.status, oselect_core::interaction::NodeStatus::Missing))
        .count();
    Ok(json!({
        "utterances": trees.len(),
        "questions": trees.values().map(|t| t.question_count()).sum::<usize>(),
        "max_depth": trees.values().map(|t| t.depth()).max().unwrap_or(0),
        "missing": missing,
    }))
}

fn simulate(wd: &Workdir, cfg: &AppConfig, args: &SimulateArgs) -> Result<Value, CliError> {
    let corpus = wd.corpus()?;
    let store = wd.pools()?;
    let started = Instant::now();
    let out = if args.sample_db_only {
        let report = sample_db_ceiling(&corpus, &store);
        wd.write_json(workdir::METRICS, &report)?;
        eprint!("{}", render_table(&report));
        json!({
            "mode": "oracle_sample_db",
            "utterances": report.utterances,
            "candidate_ceiling": report.candidate_ceiling,
            "prior_accuracy": report.prior_accuracy,
            "accuracy": report.accuracy,
            "per_difficulty": summary(&report.per_difficulty),
        })
    } else if args.mode.oracle {
        let (report, transcripts) = interaction_ceiling(&corpus, &store, &cfg.interaction);
        write_transcripts(wd, &transcripts)?;
        wd.write_json(workdir::METRICS, &report)?;
        eprint!("{}", render_table(&report));
        json!({
            "mode": "oracle",
            "utterances": report.utterances,
            "candidate_ceiling": report.candidate_ceiling,
            "prior_accuracy": report.prior_accuracy,
            "accuracy": report.accuracy,
            "mean_rounds": report.mean_rounds,
            "mean_db_size": report.mean_db_size,
            "max_db_size": report.max_db_size,
            "questions": report.questions,
            "per_difficulty": summary(&report.per_difficulty),
        })
    } else {
        let crowd = &cfg.simulate.crowd;
        let seeds = args.seeds.unwrap_or(cfg.simulate.seeds);
        let transcripts = simulate_crowd(
            &corpus,
            &store,
            &cfg.interaction,
            crowd,
            &ErrorModel::default(),
            &QuestionCache::default(),
        );
        write_transcripts(wd, &transcripts)?;
        let report = noisy_crowd_evaluation(&corpus, &store, &cfg.interaction, crowd, seeds);
        wd.write_json(workdir::METRICS, &report)?;
        json!({
            "mode": "noisy",
            "seeds": report.runs.len(),
            "responses": transcripts.len(),
            "mean_prior_accuracy": report.mean_prior_accuracy,
            "mean_fixed_model_accuracy": report.mean_fixed_model_accuracy,
            "mean_fitted_accuracy": report.mean_fitted_accuracy,
            "mean_random_annotator_accuracy": report.mean_random_annotator_accuracy,
        })
    };
    log::info!("simulation took {:.1}s", started.elapsed().as_secs_f64());
    Ok(out)
}

fn fit_command(wd: &Workdir, transcripts: Option<&std::path::Path>, single_e_step: bool) -> Result<Value, CliError> {
    let corpus = wd.corpus()?;
    let store = wd.pools()?;
    let entries = wd.transcripts(transcripts)?;
    let ds = fit_dataset(&corpus, &store, &entries);
    let init = params_of(&ErrorModel::default());
    let report = fit(
        &ds,
        &init,
        &FitOptions {
            single_e_step,
            ..FitOptions::default()
        },
    )?;
    wd.write_json(workdir::PARAMS, &report.params)?;
    let model = ErrorModel::Logistic {
        params: report.params.clone(),
    };
    let accuracy = annotation_accuracy(&corpus, &store, &entries, &model, 0);
    Ok(json!({
        "responses": ds.observation_count(),
        "iterations": report.iterations,
        "log_likelihood_trace": report.log_likelihood_trace,
        "params": summary(&report.params),
        "evaluation": evaluate(&ds, &report.params).ok().map(|e| summary(&e)),
        "annotation_accuracy": summary(&accuracy),
    }))
}

/// Opens the work directory's stores and replays the event log.
pub fn open_service(cfg: &AppConfig) -> Result<Service, CliError> {
    let wd = Workdir::new(&cfg.workdir);
    let (log, history) = EventLog::open(&cfg.event_log_path())?;
    Ok(Service::new(
        wd.corpus()?,
        wd.pools()?,
        wd.trees()?,
        wd.model()?,
        cfg.interaction.clone(),
        log,
        history,
    )?)
}

fn export(cfg: &AppConfig, out: Option<&std::path::Path>) -> Result<Value, CliError> {
    let svc = open_service(cfg)?;
    let text = svc.export();
    let lines = text.lines().count();
    match out {
        Some(path) => {
            workdir::write_text(path, &text)?;
            Ok(json!({"path": path, "utterances": lines}))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|source| CliError::Io {
                context: "stdout".into(),
                source,
            })?;
            Ok(Value::Null)
        }
    }
}

/// Runs the HTTP service until interrupted.
pub fn serve(cfg: &AppConfig, bind: Option<&str>) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    if cfg.service.precompute_on_start && !Workdir::new(&cfg.workdir).path(workdir::TREES).exists() {
        run(
            &Command::Precompute {
                budget_secs: None,
                utterance: None,
            },
            &cfg,
        )?;
    }
    if let Some(b) = bind {
        cfg.service.bind = b.to_string();
    }
    let svc = Arc::new(open_service(&cfg)?);
    let io = |source| CliError::Io {
        context: format!("serving on {}", cfg.service.bind),
        source,
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(io)?;
    rt.block_on(crate::api::serve(svc, &cfg.service.bind)).map_err(io)
}
