//! Simulated annotators and evaluation metrics: candidate ceiling,
//! interaction ceiling under a perfect annotator, annotation accuracy from
//! recorded transcripts, and noisy-crowd simulation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Mutex;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotator_em::{fit, utterance_posterior, FitDataset, FitOptions, Observation, UtteranceData};
use crate::candidates::Utterance;
use crate::corpus::{Corpus, PoolEntry, PoolStore};
use crate::infogain::{partition_entropy, partition_outputs, posterior, Belief, ClusterId, MAX_OPTIONS};
use crate::interaction::{
    make_question, question_id, run_interaction_with, Answer, InteractionConfig, NoQuestion, Problem, Question,
    ResponseRecord, StopReason, TranscriptEntry,
};
use crate::relational::denotation::denotations_equal;
use crate::relational::engine::Executor;
use crate::relational::Schema;
use crate::response_model::{AnnotatorParams, ErrorModel, ResponseId, DEFAULT_ERROR_RATE};
use crate::seeding;

/// Label used for utterances without a difficulty tag.
pub const UNLABELED: &str = "unlabeled";

/// What a perfect annotator knows about the correct program.
#[derive(Debug, Clone, Copy)]
pub enum Gold<'a> {
    /// A pool cluster equivalent to the reference program.
    Cluster(ClusterId),
    /// A reference program that matches no cluster.
    Sql(&'a str),
}

/// The response a perfect annotator gives: the option equal to the gold
/// output, NONE when that output is not displayed or the program errors.
pub fn oracle_response(q: &Question, gold: Gold<'_>, schema: &Schema) -> ResponseId {
    match gold {
        Gold::Cluster(c) => q.assignment.get(c.0).copied().unwrap_or(ResponseId::None),
        Gold::Sql(sql) => {
            let out = Executor::new(schema).ok().and_then(|mut ex| ex.execute_on(sql, &q.db).ok());
            match out {
                Some(d) => q
                    .options
                    .iter()
                    .position(|o| denotations_equal(o, &d))
                    .map_or(ResponseId::None, ResponseId::Option),
                None => ResponseId::None,
            }
        }
    }
}

pub fn oracle_answer(q: &Question, gold: Gold<'_>, schema: &Schema, annotator_id: &str) -> ResponseRecord {
    ResponseRecord::choice(q, annotator_id, oracle_response(q, gold, schema))
}

/// Questions keyed by id (utterance plus response path), shared between
/// simulated annotators. Valid while the scoring model and configuration
/// stay fixed.
#[derive(Default)]
pub struct QuestionCache {
    inner: Mutex<HashMap<String, Result<Question, NoQuestion>>>,
}

impl QuestionCache {
    pub fn get_or_make(
        &self,
        belief: &Belief,
        problem: &Problem<'_>,
        cfg: &InteractionConfig,
        error_rate: f64,
    ) -> Result<Question, NoQuestion> {
        let key = crate::interaction::question_id(problem.utterance_id, &crate::interaction::belief_path(belief));
        if let Some(q) = self.inner.lock().expect("cache lock").get(&key) {
            return q.clone();
        }
        let q = make_question(belief, problem, cfg, error_rate);
        self.inner.lock().expect("cache lock").insert(key, q.clone());
        q
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn gold_of<'a>(u: &'a Utterance, entry: &PoolEntry) -> Option<Gold<'a>> {
    match (entry.gold_cluster, u.gold_sql.as_deref()) {
        (Some(c), _) => Some(Gold::Cluster(c)),
        (None, Some(sql)) => Some(Gold::Sql(sql)),
        (None, None) => None,
    }
}

fn difficulty(u: &Utterance) -> String {
    u.difficulty.clone().unwrap_or_else(|| UNLABELED.to_string())
}

fn problem<'a>(corpus: &'a Corpus, u: &'a Utterance, entry: &'a PoolEntry) -> Problem<'a> {
    let schema = corpus.schema_of(u);
    Problem {
        utterance_id: &u.id,
        domain_id: &schema.domain_id,
        pool: &entry.pool,
        schema,
        sample_db: corpus.sample_of(u),
    }
}

/// Utterances with a reference program and a pool, in corpus order.
fn evaluable<'a>(corpus: &'a Corpus, store: &'a PoolStore) -> Vec<(&'a Utterance, &'a PoolEntry)> {
    corpus
        .utterances
        .iter()
        .filter(|u| u.gold_sql.is_some())
        .filter_map(|u| store.pools.get(&u.id).map(|e| (u, e)))
        .collect()
}

fn map_correct(weights: &[f64], gold: Option<ClusterId>) -> bool {
    let b = Belief::from_weights(weights.to_vec());
    gold.is_some() && b.map_cluster() == gold
}

/// Fraction of utterances (with a reference program) whose pool contains a
/// cluster equivalent to it.
pub fn candidate_ceiling(corpus: &Corpus, store: &PoolStore) -> f64 {
    let ev = evaluable(corpus, store);
    if ev.is_empty() {
        return 0.0;
    }
    ev.iter().filter(|(_, e)| e.gold_cluster.is_some()).count() as f64 / ev.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub utterance_id: String,
    pub difficulty: String,
    pub gold_cluster_present: bool,
    pub prior_correct: bool,
    pub map_cluster_correct: bool,
    pub map_sql: Option<String>,
    pub rounds_used: usize,
    pub db_sizes: Vec<usize>,
    pub configs_used: Vec<u8>,
    pub stopped_reason: StopReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub utterances: usize,
    pub candidate_ceiling: f64,
    pub prior_accuracy: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeilingReport {
    pub utterances: usize,
    pub candidate_ceiling: f64,
    pub prior_accuracy: f64,
    pub accuracy: f64,
    pub mean_rounds: f64,
    pub mean_db_size: f64,
    pub max_db_size: usize,
    pub questions: usize,
    pub rounds_histogram: BTreeMap<usize, usize>,
    pub per_difficulty: BTreeMap<String, Bucket>,
    pub records: Vec<EvalRecord>,
}

fn buckets(records: &[EvalRecord]) -> BTreeMap<String, Bucket> {
    let mut out: BTreeMap<String, (usize, usize, usize, usize)> = BTreeMap::new();
    for r in records {
        let b = out.entry(r.difficulty.clone()).or_default();
        b.0 += 1;
        b.1 += r.gold_cluster_present as usize;
        b.2 += r.prior_correct as usize;
        b.3 += r.map_cluster_correct as usize;
    }
    out.into_iter()
        .map(|(k, (n, c, p, a))| {
            let f = |x: usize| x as f64 / n as f64;
            (
                k,
                Bucket {
                    utterances: n,
                    candidate_ceiling: f(c),
                    prior_accuracy: f(p),
                    accuracy: f(a),
                },
            )
        })
        .collect()
}

fn summarize(records: Vec<EvalRecord>) -> CeilingReport {
    let n = records.len().max(1) as f64;
    let frac = |f: &dyn Fn(&EvalRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / n;
    let sizes: Vec<usize> = records.iter().flat_map(|r| r.db_sizes.iter().copied()).collect();
    let mut rounds_histogram = BTreeMap::new();
    for r in &records {
        *rounds_histogram.entry(r.rounds_used).or_insert(0) += 1;
    }
    CeilingReport {
        utterances: records.len(),
        candidate_ceiling: frac(&|r| r.gold_cluster_present),
        prior_accuracy: frac(&|r| r.prior_correct),
        accuracy: frac(&|r| r.map_cluster_correct),
        mean_rounds: records.iter().map(|r| r.rounds_used as f64).sum::<f64>() / n,
        mean_db_size: if sizes.is_empty() {
            0.0
        } else {
            sizes.iter().sum::<usize>() as f64 / sizes.len() as f64
        },
        max_db_size: sizes.iter().copied().max().unwrap_or(0),
        questions: sizes.len(),
        rounds_histogram,
        per_difficulty: buckets(&records),
        records,
    }
}

/// Runs every evaluable utterance against a perfect annotator with the
/// error-free response model. Returns the report and the transcripts.
pub fn interaction_ceiling(
    corpus: &Corpus,
    store: &PoolStore,
    cfg: &InteractionConfig,
) -> (CeilingReport, Vec<TranscriptEntry>) {
    let model = ErrorModel::oracle();
    let results: Vec<(EvalRecord, Vec<TranscriptEntry>)> = evaluable(corpus, store)
        .into_par_iter()
        .map(|(u, entry)| {
            let p = problem(corpus, u, entry);
            let prior = entry.pool.prior();
            let gold = gold_of(u, entry).expect("evaluable utterances have gold");
            let mut answer = |q: &Question| oracle_answer(q, gold, p.schema, "oracle");
            let out = run_interaction_with(&p, &prior, &mut answer, &model, cfg, &|b: &Belief| {
                make_question(b, &p, cfg, 0.0)
            });
            let map = out.final_belief.map_cluster();
            let record = EvalRecord {
                utterance_id: u.id.clone(),
                difficulty: difficulty(u),
                gold_cluster_present: entry.gold_cluster.is_some(),
                prior_correct: map_correct(&prior.weights, entry.gold_cluster),
                map_cluster_correct: map_correct(&out.final_belief.weights, entry.gold_cluster),
                map_sql: map.map(|c| entry.pool.cluster(c).representative_sql.clone()),
                rounds_used: out.transcript.len(),
                db_sizes: out.transcript.iter().map(|t| t.question.db.size()).collect(),
                configs_used: out.transcript.iter().map(|t| t.question.config_used).collect(),
                stopped_reason: out.stopped,
            };
            (record, out.transcript)
        })
        .collect();
    let mut records = Vec::with_capacity(results.len());
    let mut transcripts = Vec::new();
    for (r, t) in results {
        records.push(r);
        transcripts.extend(t);
    }
    (summarize(records), transcripts)
}

/// Asks exactly one question per utterance: the repaired sample database,
/// answered by a perfect annotator. The baseline for how much synthesized
/// databases add over the database that ships with the schema.
pub fn sample_db_ceiling(corpus: &Corpus, store: &PoolStore) -> CeilingReport {
    let records: Vec<EvalRecord> = evaluable(corpus, store)
        .into_par_iter()
        .map(|(u, entry)| {
            let p = problem(corpus, u, entry);
            let prior = entry.pool.prior();
            let gold = gold_of(u, entry).expect("evaluable utterances have gold");
            let outputs: Vec<_> = match Executor::new(p.schema) {
                Ok(mut exec) => entry
                    .pool
                    .representatives()
                    .iter()
                    .map(|sql| exec.execute_on(sql, p.sample_db).ok())
                    .collect(),
                Err(_) => vec![None; entry.pool.clusters.len()],
            };
            let partition = partition_outputs(&outputs, &prior.weights, MAX_OPTIONS);
            let k = partition.k();
            let ig_bits = partition_entropy(&prior.weights, &partition.assignment, k);
            let q = Question {
                id: question_id(&u.id, &[]),
                utterance_id: u.id.clone(),
                round: 1,
                path: Vec::new(),
                db: p.sample_db.clone(),
                options: partition.options,
                display_permutation: (0..k).collect(),
                assignment: partition.assignment,
                ig_bits,
                config_used: 0,
            };
            let r = oracle_response(&q, gold, p.schema);
            let post = posterior(&prior.weights, &q.assignment, k, 0.0, r).unwrap_or_else(|| prior.weights.clone());
            let map = Belief::from_weights(post.clone()).map_cluster();
            EvalRecord {
                utterance_id: u.id.clone(),
                difficulty: difficulty(u),
                gold_cluster_present: entry.gold_cluster.is_some(),
                prior_correct: map_correct(&prior.weights, entry.gold_cluster),
                map_cluster_correct: map_correct(&post, entry.gold_cluster),
                map_sql: map.map(|c| entry.pool.cluster(c).representative_sql.clone()),
                rounds_used: 1,
                db_sizes: vec![p.sample_db.size()],
                configs_used: Vec::new(),
                stopped_reason: StopReason::MaxRounds,
            }
        })
        .collect();
    summarize(records)
}

/// Observations per utterance from transcripts; timeouts are dropped.
pub fn fit_dataset(corpus: &Corpus, store: &PoolStore, transcripts: &[TranscriptEntry]) -> FitDataset {
    let mut by_utt: HashMap<&str, Vec<Observation>> = HashMap::new();
    for t in transcripts {
        let Answer::Choice(r) = t.response.response else { continue };
        by_utt.entry(t.utterance_id.as_str()).or_default().push(Observation {
            annotator: t.response.annotator_id.clone(),
            assignment: t.question.assignment.clone(),
            k: t.question.k(),
            response: r,
        });
    }
    let utterances = corpus
        .utterances
        .iter()
        .filter_map(|u| {
            let entry = store.pools.get(&u.id)?;
            Some(UtteranceData {
                utterance_id: u.id.clone(),
                domain: corpus.schema_of(u).domain_id.clone(),
                prior: entry.pool.prior().weights,
                observations: by_utt.remove(u.id.as_str()).unwrap_or_default(),
                gold: entry.gold_cluster.map(|c| c.0),
                difficulty: u.difficulty.clone(),
            })
        })
        .collect();
    FitDataset { utterances }
}

pub fn params_of(model: &ErrorModel) -> AnnotatorParams {
    match model {
        ErrorModel::Constant { error_rate } => AnnotatorParams::with_error_rate(*error_rate),
        ErrorModel::Logistic { params } => params.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub utterances: usize,
    pub accuracy: f64,
    pub prior_accuracy: f64,
    /// Keeping only the clusters consistent with one randomly chosen
    /// annotator's responses (the prior when none survive).
    pub random_annotator_accuracy: f64,
    pub per_difficulty: BTreeMap<String, Bucket>,
}

/// MAP accuracy of posteriors recomputed from all transcripts under
/// `model`, against the prior and a single-random-annotator baseline.
pub fn annotation_accuracy(
    corpus: &Corpus,
    store: &PoolStore,
    transcripts: &[TranscriptEntry],
    model: &ErrorModel,
    seed: u64,
) -> AccuracyReport {
    let ds = fit_dataset(corpus, store, transcripts);
    let params = params_of(model);
    let strict = AnnotatorParams::with_error_rate(0.0);
    let gold_utts: HashMap<&str, &Utterance> = corpus
        .utterances
        .iter()
        .filter(|u| u.gold_sql.is_some())
        .map(|u| (u.id.as_str(), u))
        .collect();
    let mut records = Vec::new();
    let mut random_hits = 0usize;
    for ud in &ds.utterances {
        let Some(u) = gold_utts.get(ud.utterance_id.as_str()) else { continue };
        let gold = ud.gold.map(ClusterId);
        let post = utterance_posterior(ud, &params);
        let mut annotators: Vec<&str> = ud.observations.iter().map(|o| o.annotator.as_str()).collect();
        annotators.sort();
        annotators.dedup();
        let random_post = if annotators.is_empty() {
            ud.prior.clone()
        } else {
            let mut rng = seeding::rng(seeding::derive_str(seed, &ud.utterance_id));
            let pick = annotators[rng.gen_range(0..annotators.len())];
            let single = UtteranceData {
                observations: ud.observations.iter().filter(|o| o.annotator == pick).cloned().collect(),
                ..ud.clone()
            };
            utterance_posterior(&single, &strict)
        };
        random_hits += map_correct(&random_post, gold) as usize;
        records.push(EvalRecord {
            utterance_id: ud.utterance_id.clone(),
            difficulty: difficulty(u),
            gold_cluster_present: gold.is_some(),
            prior_correct: map_correct(&ud.prior, gold),
            map_cluster_correct: map_correct(&post, gold),
            map_sql: None,
            rounds_used: 0,
            db_sizes: Vec::new(),
            configs_used: Vec::new(),
            stopped_reason: StopReason::MaxRounds,
        });
    }
    let n = records.len().max(1) as f64;
    AccuracyReport {
        utterances: records.len(),
        accuracy: records.iter().filter(|r| r.map_cluster_correct).count() as f64 / n,
        prior_accuracy: records.iter().filter(|r| r.prior_correct).count() as f64 / n,
        random_annotator_accuracy: random_hits as f64 / n,
        per_difficulty: buckets(&records),
    }
}

/// Simulated crowd: each utterance is annotated by between
/// `min_per_utterance` and `max_per_utterance` workers (drawn per
/// utterance), taken in rotation from `error_rates.len()` workers. Worker
/// `j` answers correctly with probability `1 − error_rates[j]` and
/// otherwise uniformly among all responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrowdConfig {
    pub error_rates: Vec<f64>,
    pub min_per_utterance: usize,
    pub max_per_utterance: usize,
    pub seed: u64,
}

impl Default for CrowdConfig {
    fn default() -> Self {
        CrowdConfig {
            error_rates: vec![DEFAULT_ERROR_RATE; 6],
            min_per_utterance: 2,
            max_per_utterance: 3,
            seed: 0,
        }
    }
}

impl CrowdConfig {
    fn workers_for(&self, utterance_id: &str) -> usize {
        let lo = self.min_per_utterance.min(self.max_per_utterance);
        let hi = self.max_per_utterance.max(lo);
        let mut rng = seeding::rng(seeding::derive_str(self.seed, &format!("{utterance_id}/workers")));
        rng.gen_range(lo..=hi).min(self.error_rates.len().max(1))
    }
}

pub fn annotator_name(j: usize) -> String {
    format!("worker-{j:02}")
}

/// Runs one interaction per (utterance, assigned worker). Interactions use
/// `model` (the model in force before any fitting) for scoring and
/// updates.
pub fn simulate_crowd(
    corpus: &Corpus,
    store: &PoolStore,
    cfg: &InteractionConfig,
    crowd: &CrowdConfig,
    model: &ErrorModel,
    cache: &QuestionCache,
) -> Vec<TranscriptEntry> {
    let n_workers = crowd.error_rates.len().max(1);
    let jobs: Vec<(usize, &Utterance, &PoolEntry, usize)> = evaluable(corpus, store)
        .into_iter()
        .enumerate()
        .flat_map(|(ui, (u, e))| {
            (0..crowd.workers_for(&u.id)).map(move |t| (ui, u, e, (ui + t) % n_workers))
        })
        .collect();
    let results: Vec<Vec<TranscriptEntry>> = jobs
        .into_par_iter()
        .map(|(_, u, entry, worker)| {
            let p = problem(corpus, u, entry);
            let name = annotator_name(worker);
            let e_true = crowd.error_rates.get(worker).copied().unwrap_or(DEFAULT_ERROR_RATE);
            let gold = gold_of(u, entry).expect("evaluable utterances have gold");
            let mut rng = seeding::rng(seeding::derive_str(crowd.seed, &format!("{}/{name}", u.id)));
            let mut answer = |q: &Question| {
                let truth = oracle_response(q, gold, p.schema);
                let r = if rng.gen_bool(e_true.clamp(0.0, 1.0)) {
                    ResponseId::from_slot(rng.gen_range(0..=q.k()), q.k())
                } else {
                    truth
                };
                ResponseRecord::choice(q, &name, r)
            };
            let e_model = model.error_rate(&name, p.domain_id);
            let out = run_interaction_with(&p, &entry.pool.prior(), &mut answer, model, cfg, &|b: &Belief| {
                cache.get_or_make(b, &p, cfg, e_model)
            });
            out.transcript
        })
        .collect();
    results.into_iter().flatten().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdRun {
    pub seed: u64,
    pub responses: usize,
    pub prior_accuracy: f64,
    pub fixed_model_accuracy: f64,
    pub fitted_accuracy: f64,
    pub random_annotator_accuracy: f64,
    pub fitted_params: AnnotatorParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdReport {
    pub runs: Vec<CrowdRun>,
    pub mean_prior_accuracy: f64,
    pub mean_fixed_model_accuracy: f64,
    pub mean_fitted_accuracy: f64,
    pub mean_random_annotator_accuracy: f64,
}

/// Simulates the crowd under `seeds` different seeds, fits the error model
/// on each run's transcripts, and compares aggregated accuracies.
pub fn noisy_crowd_evaluation(
    corpus: &Corpus,
    store: &PoolStore,
    cfg: &InteractionConfig,
    crowd: &CrowdConfig,
    seeds: usize,
) -> CrowdReport {
    let model = ErrorModel::default();
    let cache = QuestionCache::default();
    let mut runs = Vec::with_capacity(seeds);
    for s in 0..seeds as u64 {
        let run_crowd = CrowdConfig {
            seed: seeding::derive(crowd.seed, s),
            ..crowd.clone()
        };
        let transcripts = simulate_crowd(corpus, store, cfg, &run_crowd, &model, &cache);
        let ds = fit_dataset(corpus, store, &transcripts);
        let fitted = match fit(&ds, &AnnotatorParams::default(), &FitOptions::default()) {
            Ok(r) => r.params,
            Err(err) => {
                log::warn!("fit failed on crowd run {s}: {err}");
                AnnotatorParams::default()
            }
        };
        let fitted_model = ErrorModel::Logistic { params: fitted.clone() };
        let acc = annotation_accuracy(corpus, store, &transcripts, &fitted_model, run_crowd.seed);
        let fixed = annotation_accuracy(corpus, store, &transcripts, &model, run_crowd.seed);
        runs.push(CrowdRun {
            seed: run_crowd.seed,
            responses: transcripts.len(),
            prior_accuracy: acc.prior_accuracy,
            fixed_model_accuracy: fixed.accuracy,
            fitted_accuracy: acc.accuracy,
            random_annotator_accuracy: acc.random_annotator_accuracy,
            fitted_params: fitted,
        });
    }
    let mean = |f: &dyn Fn(&CrowdRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len().max(1) as f64;
    CrowdReport {
        mean_prior_accuracy: mean(&|r| r.prior_accuracy),
        mean_fixed_model_accuracy: mean(&|r| r.fixed_model_accuracy),
        mean_fitted_accuracy: mean(&|r| r.fitted_accuracy),
        mean_random_annotator_accuracy: mean(&|r| r.random_annotator_accuracy),
        runs,
    }
}

/// Plain-text summary table of a ceiling report.
pub fn render_table(report: &CeilingReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<12} {:>5} {:>9} {:>7} {:>8}", "difficulty", "n", "cand.ceil", "prior", "oracle");
    for (k, b) in &report.per_difficulty {
        let _ = writeln!(
            s,
            "{:<12} {:>5} {:>9.3} {:>7.3} {:>8.3}",
            k, b.utterances, b.candidate_ceiling, b.prior_accuracy, b.accuracy
        );
    }
    let _ = writeln!(
        s,
        "{:<12} {:>5} {:>9.3} {:>7.3} {:>8.3}",
        "all", report.utterances, report.candidate_ceiling, report.prior_accuracy, report.accuracy
    );
    let _ = writeln!(
        s,
        "mean rounds {:.2}, mean db size {:.1}, max db size {}",
        report.mean_rounds, report.mean_db_size, report.max_db_size
    );
    s
}
