//! The per-utterance interaction loop: build a question from the current
//! belief, collect a response, update the belief, and stop once a cluster
//! dominates, the round limit is reached, or no useful question exists.

pub mod transcript;
pub mod tree;

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::candidates::CandidatePool;
use crate::infogain::{
    partition_outputs, posterior, truncate, Belief, EntrySource, TruncationConfig, MAX_OPTIONS,
};
use crate::relational::denotation::denotations_equal;
use crate::relational::engine::Executor;
use crate::relational::{Database, Denotation, Schema};
use crate::response_model::{ErrorModel, ResponseId};
use crate::seeding;
use crate::synth::{synthesize_question_db, SynthConfig, SynthFailure};

pub use transcript::{read_transcript, write_transcript, TranscriptEntry};
pub use tree::{precompute_tree, NodeStatus, ResponseTree, TreeNode};

/// Everything fixed about one utterance's interaction.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub utterance_id: &'a str,
    pub domain_id: &'a str,
    pub pool: &'a CandidatePool,
    pub schema: &'a Schema,
    pub sample_db: &'a Database,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InteractionConfig {
    pub max_rounds: usize,
    pub stop_threshold: f64,
    pub seed: u64,
    /// Score candidate databases as if annotators never erred.
    pub oracle_ig: bool,
    pub synth: SynthConfig,
    pub truncation: TruncationConfig,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        InteractionConfig {
            max_rounds: 3,
            stop_threshold: 0.9,
            seed: 0,
            oracle_ig: false,
            synth: SynthConfig::default(),
            truncation: TruncationConfig::default(),
        }
    }
}

/// An output-selection question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub utterance_id: String,
    /// 1-based.
    pub round: usize,
    /// Responses that led to this question.
    pub path: Vec<ResponseId>,
    pub db: Database,
    /// Distinct outputs in rank order; option `i` is `ResponseId::Option(i)`.
    pub options: Vec<Denotation>,
    /// Option ids in the order they are shown.
    pub display_permutation: Vec<usize>,
    /// Correct response of every cluster in the pool.
    pub assignment: Vec<ResponseId>,
    pub ig_bits: f64,
    pub config_used: u8,
}

impl Question {
    pub fn k(&self) -> usize {
        self.options.len()
    }

    pub fn accepts(&self, r: ResponseId) -> bool {
        match r {
            ResponseId::Option(i) => i < self.k(),
            ResponseId::None => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum NoQuestion {
    #[error("no informative database: {0}")]
    Synth(SynthFailure),
    #[error("the question was not precomputed in time")]
    Missing,
}

/// What the annotator did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Choice(ResponseId),
    /// The client timer ran out; the utterance is skipped.
    Timeout,
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Choice(r) => r.fmt(f),
            Answer::Timeout => f.write_str("timeout"),
        }
    }
}

impl Serialize for Answer {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Answer::Choice(r) => r.serialize(s),
            Answer::Timeout => s.serialize_str("timeout"),
        }
    }
}

impl<'de> Deserialize<'de> for Answer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        if v.as_str().is_some_and(|s| s.eq_ignore_ascii_case("timeout")) {
            return Ok(Answer::Timeout);
        }
        serde_json::from_value(v)
            .map(Answer::Choice)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub question_id: String,
    pub annotator_id: String,
    pub response: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text_ambiguous: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text_confusing: Option<String>,
    /// The answer the annotator had in mind after choosing NONE.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text_expected: Option<String>,
    #[serde(default)]
    pub elapsed_ms: u64,
}

impl ResponseRecord {
    pub fn choice(question: &Question, annotator_id: &str, r: ResponseId) -> Self {
        ResponseRecord {
            question_id: question.id.clone(),
            annotator_id: annotator_id.to_string(),
            response: Answer::Choice(r),
            free_text_ambiguous: None,
            free_text_confusing: None,
            free_text_expected: None,
            elapsed_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum UpdateError {
    #[error("response is for question `{found}`, expected `{expected}`")]
    WrongQuestion { expected: String, found: String },
    #[error("response {response} is not an option of a question with {k} options")]
    NotAnOption { response: String, k: usize },
    #[error("the response contradicts every cluster")]
    ZeroMass,
}

fn path_key(path: &[ResponseId]) -> String {
    path.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(".")
}

pub fn question_id(utterance_id: &str, path: &[ResponseId]) -> String {
    format!("{utterance_id}#{}", path_key(path))
}

/// Seed of the question asked after `path`; independent of everything else
/// so precomputed and live questions coincide.
pub fn question_seed(seed: u64, utterance_id: &str, path: &[ResponseId]) -> u64 {
    seeding::derive_str(seeding::derive_str(seed, utterance_id), &path_key(path))
}

/// Responses recorded in a belief's history.
pub fn belief_path(belief: &Belief) -> Vec<ResponseId> {
    belief.history.iter().map(|(_, r)| *r).collect()
}

/// Synthesizes a question for `belief`. `error_rate` is the response model
/// used to score databases (ignored with `cfg.oracle_ig`).
pub fn make_question(
    belief: &Belief,
    problem: &Problem<'_>,
    cfg: &InteractionConfig,
    error_rate: f64,
) -> Result<Question, NoQuestion> {
    let reps = problem.pool.representatives();
    let tb = truncate(belief, &reps, &problem.pool.neighbors, &cfg.truncation);
    let path = belief_path(belief);
    let seed = question_seed(cfg.seed, problem.utterance_id, &path);
    let synth_cfg = SynthConfig {
        seed,
        error_rate: if cfg.oracle_ig { 0.0 } else { error_rate },
        ..cfg.synth.clone()
    };
    let result = synthesize_question_db(&tb, problem.schema, problem.sample_db, &synth_cfg)
        .map_err(NoQuestion::Synth)?;
    let mut exec = Executor::with_timeout(problem.schema, synth_cfg.query_timeout)
        .map_err(|_| NoQuestion::Synth(SynthFailure::IgZero))?;
    exec.load(&result.db)
        .map_err(|_| NoQuestion::Synth(SynthFailure::IgZero))?;
    let outputs: Vec<Option<Denotation>> = tb.entries.iter().map(|e| exec.run(&e.sql).ok()).collect();
    let partition = partition_outputs(&outputs, &tb.weights(), MAX_OPTIONS);
    let assignment: Vec<ResponseId> = reps
        .iter()
        .enumerate()
        .map(|(ci, sql)| {
            let in_tb = tb
                .entries
                .iter()
                .position(|e| e.source == EntrySource::Cluster(crate::infogain::ClusterId(ci)));
            match in_tb {
                Some(idx) => partition.assignment[idx],
                None => match exec.run(sql) {
                    Ok(d) => partition
                        .options
                        .iter()
                        .position(|o| denotations_equal(o, &d))
                        .map_or(ResponseId::None, ResponseId::Option),
                    Err(_) => ResponseId::None,
                },
            }
        })
        .collect();
    let mut display_permutation: Vec<usize> = (0..partition.k()).collect();
    display_permutation.shuffle(&mut seeding::rng(seeding::derive_str(seed, "display")));
    Ok(Question {
        id: question_id(problem.utterance_id, &path),
        utterance_id: problem.utterance_id.to_string(),
        round: belief.round + 1,
        path,
        db: result.db,
        options: partition.options,
        display_permutation,
        assignment,
        ig_bits: result.ig_bits,
        config_used: result.config_used,
    })
}

/// Bayes update of the full belief with one response at error rate `e`.
/// A timeout leaves the belief unchanged.
pub fn update_with_rate(
    belief: &Belief,
    q: &Question,
    record: &ResponseRecord,
    e: f64,
) -> Result<Belief, UpdateError> {
    if record.question_id != q.id {
        return Err(UpdateError::WrongQuestion {
            expected: q.id.clone(),
            found: record.question_id.clone(),
        });
    }
    let r = match record.response {
        Answer::Timeout => return Ok(belief.clone()),
        Answer::Choice(r) => r,
    };
    if !q.accepts(r) {
        return Err(UpdateError::NotAnOption {
            response: r.to_string(),
            k: q.k(),
        });
    }
    let weights = posterior(&belief.weights, &q.assignment, q.k(), e, r).ok_or(UpdateError::ZeroMass)?;
    let mut history = belief.history.clone();
    history.push((q.id.clone(), r));
    Ok(Belief {
        weights,
        round: belief.round + 1,
        history,
    })
}

/// [`update_with_rate`] with the error rate the model assigns to the
/// responding annotator in `domain`.
pub fn update_belief(
    belief: &Belief,
    q: &Question,
    record: &ResponseRecord,
    model: &ErrorModel,
    domain: &str,
) -> Result<Belief, UpdateError> {
    update_with_rate(belief, q, record, model.error_rate(&record.annotator_id, domain))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Confident,
    MaxRounds,
    NoQuestion,
    Skipped,
    UpdateFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionOutcome {
    pub final_belief: Belief,
    pub transcript: Vec<TranscriptEntry>,
    pub stopped: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_question: Option<NoQuestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<UpdateError>,
}

/// Whether another question should be asked after `belief`.
pub fn should_continue(belief: &Belief, cfg: &InteractionConfig) -> Option<StopReason> {
    if belief.round >= cfg.max_rounds {
        Some(StopReason::MaxRounds)
    } else if belief.max_weight() > cfg.stop_threshold {
        Some(StopReason::Confident)
    } else {
        None
    }
}

/// Asks up to `cfg.max_rounds` questions of one annotator. `answer` plays
/// the annotator; `model` supplies its error rate for scoring and updates.
pub fn run_interaction(
    problem: &Problem<'_>,
    belief0: &Belief,
    annotator_id: &str,
    answer: &mut dyn FnMut(&Question) -> ResponseRecord,
    model: &ErrorModel,
    cfg: &InteractionConfig,
) -> InteractionOutcome {
    let e = model.error_rate(annotator_id, problem.domain_id);
    run_interaction_with(problem, belief0, answer, model, cfg, &|b: &Belief| {
        make_question(b, problem, cfg, e)
    })
}

/// [`run_interaction`] with questions drawn from `questions` (for example a
/// precomputed tree or a cache shared between annotators).
pub fn run_interaction_with(
    problem: &Problem<'_>,
    belief0: &Belief,
    answer: &mut dyn FnMut(&Question) -> ResponseRecord,
    model: &ErrorModel,
    cfg: &InteractionConfig,
    questions: &dyn Fn(&Belief) -> Result<Question, NoQuestion>,
) -> InteractionOutcome {
    let mut belief = belief0.clone();
    let mut transcript = Vec::new();
    loop {
        if let Some(stopped) = should_continue(&belief, cfg) {
            return InteractionOutcome { final_belief: belief, transcript, stopped, no_question: None, error: None };
        }
        let q = match questions(&belief) {
            Ok(q) => q,
            Err(nq) => {
                return InteractionOutcome {
                    final_belief: belief,
                    transcript,
                    stopped: StopReason::NoQuestion,
                    no_question: Some(nq),
                    error: None,
                }
            }
        };
        let record = answer(&q);
        let skipped = record.response == Answer::Timeout;
        match update_belief(&belief, &q, &record, model, problem.domain_id) {
            Ok(next) => {
                transcript.push(TranscriptEntry {
                    utterance_id: problem.utterance_id.to_string(),
                    question: q,
                    response: record,
                    posterior: next.weights.clone(),
                });
                belief = next;
                if skipped {
                    return InteractionOutcome {
                        final_belief: belief,
                        transcript,
                        stopped: StopReason::Skipped,
                        no_question: None,
                        error: None,
                    };
                }
            }
            Err(err) => {
                return InteractionOutcome {
                    final_belief: belief,
                    transcript,
                    stopped: StopReason::UpdateFailed,
                    no_question: None,
                    error: Some(err),
                }
            }
        }
    }
}

/// Replays recorded responses from `belief0`, re-deriving each posterior.
pub fn replay(
    belief0: &Belief,
    entries: &[TranscriptEntry],
    model: &ErrorModel,
    domain: &str,
) -> Result<Belief, UpdateError> {
    let mut b = belief0.clone();
    for en in entries {
        b = update_belief(&b, &en.question, &en.response, model, domain)?;
    }
    Ok(b)
}
