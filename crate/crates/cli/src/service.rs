//! Annotation sessions over the interaction engine.
//!
//! All state changes go through the event log first; a service rebuilt
//! from the same log reaches the same sessions, questions and posteriors.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use oselect_core::annotator_em::{utterance_posterior, Observation, UtteranceData};
use oselect_core::corpus::{Corpus, Unit};
use oselect_core::corpus::PoolStore;
use oselect_core::evalsim::params_of;
use oselect_core::infogain::Belief;
use oselect_core::interaction::{
    belief_path, make_question, should_continue, update_with_rate, Answer, InteractionConfig, NoQuestion,
    Problem, Question, ResponseRecord, StopReason, TranscriptEntry, UpdateError,
};
use oselect_core::relational::{Denotation, Value};
use oselect_core::response_model::{AnnotatorParams, ErrorModel, ResponseId};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Event, EventKind, EventLog, LogError};
use crate::workdir::Trees;

/// Seconds the client gives an annotator per question. Late answers are
/// still accepted.
pub const QUESTION_TIME_LIMIT_SECS: u64 = 240;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown utterance `{0}`")]
    UnknownUtterance(String),
    #[error("missing or invalid session token")]
    BadToken,
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("question `{found}` was already answered")]
    Duplicate { found: String },
    #[error("question `{found}` is not the open question (`{expected}`)")]
    Stale { expected: String, found: String },
    #[error("the session has no open question")]
    SessionDone,
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("event log is inconsistent at seq {seq}: {message}")]
    Replay { seq: u64, message: String },
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::UnknownUtterance(_) => "unknown_utterance",
            ServiceError::BadToken => "bad_token",
            ServiceError::UnknownUnit(_) => "unknown_unit",
            ServiceError::Duplicate { .. } => "duplicate_response",
            ServiceError::Stale { .. } => "stale_question",
            ServiceError::SessionDone => "session_done",
            ServiceError::Malformed(_) => "malformed",
            ServiceError::Log(_) => "event_log",
            ServiceError::Replay { .. } => "replay",
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub annotator_id: String,
    #[serde(default)]
    pub unit_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub token: String,
    pub annotator_id: String,
    pub unit_id: String,
    pub utterances: Vec<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeText {
    #[serde(default)]
    pub ambiguous: Option<String>,
    #[serde(default)]
    pub confusing: Option<String>,
    #[serde(default)]
    pub expected: Option<String>,
}

/// `response` is an option id, `"none"` or `"timeout"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseBody {
    pub question_id: String,
    pub response: Answer,
    #[serde(default)]
    pub free_text: FreeText,
    #[serde(default)]
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnView {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
    pub primary_key: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableView {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub columns: Vec<ColumnView>,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForeignKeyView {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionView {
    /// Value to send back as `response`.
    pub id: usize,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub ordered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub question_id: String,
    pub round: usize,
    pub max_rounds: usize,
    pub time_limit_secs: u64,
    pub utterance_id: String,
    pub utterance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_description: Option<String>,
    pub tables: Vec<TableView>,
    pub foreign_keys: Vec<ForeignKeyView>,
    /// In display order.
    pub options: Vec<OptionView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextView {
    Question {
        session_id: String,
        progress: Progress,
        question: Box<QuestionView>,
    },
    Done {
        session_id: String,
        progress: Progress,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSql {
    pub sql: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorView {
    pub utterance_id: String,
    pub map_sql: Option<String>,
    pub responses: usize,
    pub posterior: Vec<WeightedSql>,
}

/// One line of the annotation export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportLine {
    pub utterance_id: String,
    pub map_sql: Option<String>,
    pub posterior: Vec<WeightedSql>,
}

#[derive(Debug, Clone)]
struct UtteranceState {
    id: String,
    belief: Belief,
    entries: Vec<TranscriptEntry>,
    current: Option<Question>,
    stopped: Option<StopReason>,
}

#[derive(Debug, Clone)]
struct Session {
    token: String,
    annotator_id: String,
    seed: u64,
    utterances: Vec<UtteranceState>,
    cursor: usize,
}

impl Session {
    fn progress(&self) -> Progress {
        Progress {
            completed: self.cursor.min(self.utterances.len()),
            total: self.utterances.len(),
        }
    }
}

struct State {
    sessions: BTreeMap<String, Session>,
    /// Session ids in creation order.
    order: Vec<String>,
    log: EventLog,
}

type QuestionKey = (String, Vec<ResponseId>, u64, u64);

pub struct Service {
    corpus: Corpus,
    store: PoolStore,
    trees: Trees,
    model: ErrorModel,
    cfg: InteractionConfig,
    units: Vec<Unit>,
    questions: Mutex<HashMap<QuestionKey, Result<Question, NoQuestion>>>,
    state: Mutex<State>,
}

fn session_id(n: usize) -> String {
    format!("s{:04}", n + 1)
}

fn new_token() -> String {
    let bytes: [u8; 16] = rand::thread_rng().gen();
    bytes.iter().fold(String::with_capacity(32), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn render_option(id: usize, d: &Denotation) -> OptionView {
    OptionView {
        id,
        columns: d.columns.clone(),
        rows: d.rows.clone(),
        ordered: d.ordered,
    }
}

impl Service {
    /// Builds the service and replays `history` (events already in `log`).
    pub fn new(
        corpus: Corpus,
        store: PoolStore,
        trees: Trees,
        model: ErrorModel,
        cfg: InteractionConfig,
        log: EventLog,
        history: Vec<Event>,
    ) -> Result<Service, ServiceError> {
        let units = if corpus.units.is_empty() {
            vec![Unit {
                id: "all".into(),
                utterances: corpus.utterances.iter().map(|u| u.id.clone()).collect(),
            }]
        } else {
            corpus.units.clone()
        };
        let svc = Service {
            corpus,
            store,
            trees,
            model,
            cfg,
            units,
            questions: Mutex::new(HashMap::new()),
            state: Mutex::new(State {
                sessions: BTreeMap::new(),
                order: Vec::new(),
                log,
            }),
        };
        {
            let mut st = svc.state.lock().expect("state lock");
            for ev in history {
                svc.apply(&mut st, &ev)?;
            }
        }
        Ok(svc)
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn session_count(&self) -> usize {
        self.state.lock().expect("state lock").sessions.len()
    }

    fn problem<'a>(&'a self, utterance_id: &'a str) -> Option<Problem<'a>> {
        let u = self.corpus.utterance(utterance_id).ok()?;
        let entry = self.store.pools.get(utterance_id)?;
        let schema = self.corpus.schema_of(u);
        Some(Problem {
            utterance_id: &u.id,
            domain_id: &schema.domain_id,
            pool: &entry.pool,
            schema,
            sample_db: self.corpus.sample_of(u),
        })
    }

    fn prior(&self, utterance_id: &str) -> Belief {
        self.store
            .pools
            .get(utterance_id)
            .map(|e| e.pool.prior())
            .unwrap_or_else(|| Belief::from_weights(Vec::new()))
    }

    fn question_for(&self, problem: &Problem<'_>, belief: &Belief, annotator: &str, seed: u64) -> Result<Question, NoQuestion> {
        let e = self.model.error_rate(annotator, problem.domain_id);
        let path = belief_path(belief);
        if seed == self.cfg.seed {
            if let Some(tree) = self.trees.get(problem.utterance_id) {
                if tree.error_rate == e {
                    match tree.question(&path) {
                        Some(Ok(q)) => return Ok(q.clone()),
                        Some(Err(NoQuestion::Missing)) | None => {}
                        Some(Err(nq)) => return Err(nq),
                    }
                }
            }
        }
        let key = (problem.utterance_id.to_string(), path, e.to_bits(), seed);
        if let Some(hit) = self.questions.lock().expect("cache lock").get(&key) {
            return hit.clone();
        }
        let cfg = InteractionConfig {
            seed,
            ..self.cfg.clone()
        };
        let made = make_question(belief, problem, &cfg, e);
        self.questions.lock().expect("cache lock").insert(key, made.clone());
        made
    }

    /// Moves the cursor to the first utterance that still needs a question
    /// and makes sure that utterance has its question ready.
    fn advance(&self, s: &mut Session) {
        while s.cursor < s.utterances.len() {
            let st = &mut s.utterances[s.cursor];
            if st.current.is_some() {
                return;
            }
            if st.stopped.is_none() {
                match self.problem(&st.id) {
                    None => st.stopped = Some(StopReason::NoQuestion),
                    Some(problem) => {
                        if let Some(reason) = should_continue(&st.belief, &self.cfg) {
                            st.stopped = Some(reason);
                        } else {
                            match self.question_for(&problem, &st.belief, &s.annotator_id, s.seed) {
                                Ok(q) => {
                                    st.current = Some(q);
                                    return;
                                }
                                Err(nq) => {
                                    log::info!("{}: no question ({nq})", st.id);
                                    st.stopped = Some(StopReason::NoQuestion);
                                }
                            }
                        }
                    }
                }
            }
            s.cursor += 1;
        }
    }

    fn record_response(&self, s: &mut Session, record: ResponseRecord) {
        let st = &mut s.utterances[s.cursor];
        let q = st.current.take().expect("an open question");
        let domain = self
            .problem(&st.id)
            .map(|p| p.domain_id.to_string())
            .unwrap_or_default();
        let e = self.model.error_rate(&record.annotator_id, &domain);
        let timeout = record.response == Answer::Timeout;
        match update_with_rate(&st.belief, &q, &record, e) {
            Ok(next) => {
                st.entries.push(TranscriptEntry {
                    utterance_id: st.id.clone(),
                    question: q,
                    response: record,
                    posterior: next.weights.clone(),
                });
                st.belief = next;
                if timeout {
                    st.stopped = Some(StopReason::Skipped);
                }
            }
            Err(err) => {
                log::warn!("{}: {err}", st.id);
                st.stopped = Some(StopReason::UpdateFailed);
            }
        }
    }

    fn check_response(&self, s: &Session, body: &ResponseBody) -> Result<(), ServiceError> {
        let Some(st) = s.utterances.get(s.cursor) else {
            return Err(ServiceError::SessionDone);
        };
        let answered = |id: &str| {
            s.utterances
                .iter()
                .any(|u| u.entries.iter().any(|e| e.question.id == id))
        };
        let q = st.current.as_ref().ok_or(ServiceError::SessionDone)?;
        if body.question_id != q.id {
            if answered(&body.question_id) {
                return Err(ServiceError::Duplicate {
                    found: body.question_id.clone(),
                });
            }
            return Err(ServiceError::Stale {
                expected: q.id.clone(),
                found: body.question_id.clone(),
            });
        }
        if let Answer::Choice(r) = body.response {
            if !q.accepts(r) {
                return Err(ServiceError::Malformed(
                    UpdateError::NotAnOption {
                        response: r.to_string(),
                        k: q.k(),
                    }
                    .to_string(),
                ));
            }
        }
        Ok(())
    }

    fn apply(&self, st: &mut State, ev: &Event) -> Result<(), ServiceError> {
        let bad = |message: String| ServiceError::Replay { seq: ev.seq, message };
        match &ev.kind {
            EventKind::SessionCreated {
                annotator_id,
                utterances,
                token,
                seed,
                ..
            } => {
                let session = Session {
                    token: token.clone(),
                    annotator_id: annotator_id.clone(),
                    seed: *seed,
                    utterances: utterances
                        .iter()
                        .map(|id| UtteranceState {
                            id: id.clone(),
                            belief: self.prior(id),
                            entries: Vec::new(),
                            current: None,
                            stopped: None,
                        })
                        .collect(),
                    cursor: 0,
                };
                if st.sessions.insert(ev.session_id.clone(), session).is_some() {
                    return Err(bad(format!("session `{}` created twice", ev.session_id)));
                }
                st.order.push(ev.session_id.clone());
            }
            EventKind::ResponseRecorded { utterance_id, record } => {
                let s = st
                    .sessions
                    .get_mut(&ev.session_id)
                    .ok_or_else(|| bad(format!("unknown session `{}`", ev.session_id)))?;
                self.advance(s);
                let open = s.utterances.get(s.cursor).and_then(|u| u.current.as_ref());
                match open {
                    Some(q) if q.id == record.question_id && &q.utterance_id == utterance_id => {}
                    other => {
                        return Err(bad(format!(
                            "response to `{}` but the open question is {:?}",
                            record.question_id,
                            other.map(|q| &q.id)
                        )))
                    }
                }
                self.record_response(s, record.clone());
            }
        }
        Ok(())
    }

    pub fn create_session(&self, req: CreateSession) -> Result<SessionCreated, ServiceError> {
        if req.annotator_id.trim().is_empty() {
            return Err(ServiceError::Malformed("annotator_id must not be empty".into()));
        }
        let mut st = self.state.lock().expect("state lock");
        let unit = match &req.unit_id {
            Some(id) => self
                .units
                .iter()
                .find(|u| &u.id == id)
                .ok_or_else(|| ServiceError::UnknownUnit(id.clone()))?,
            None => &self.units[st.order.len() % self.units.len()],
        };
        let id = session_id(st.order.len());
        let kind = EventKind::SessionCreated {
            annotator_id: req.annotator_id.clone(),
            unit_id: unit.id.clone(),
            utterances: unit.utterances.clone(),
            token: new_token(),
            seed: self.cfg.seed,
        };
        let ev = st.log.append(&id, kind)?;
        self.apply(&mut st, &ev)?;
        let EventKind::SessionCreated {
            annotator_id,
            unit_id,
            utterances,
            token,
            ..
        } = ev.kind
        else {
            unreachable!()
        };
        Ok(SessionCreated {
            session_id: id,
            token,
            annotator_id,
            unit_id,
            utterances,
            created_at: ev.timestamp,
        })
    }

    fn session<'a>(st: &'a mut State, id: &str, token: Option<&str>) -> Result<&'a mut Session, ServiceError> {
        let s = st
            .sessions
            .get_mut(id)
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))?;
        if token != Some(s.token.as_str()) {
            return Err(ServiceError::BadToken);
        }
        Ok(s)
    }

    fn view(&self, id: &str, s: &Session) -> NextView {
        let progress = s.progress();
        let Some(q) = s.utterances.get(s.cursor).and_then(|u| u.current.as_ref()) else {
            return NextView::Done {
                session_id: id.to_string(),
                progress,
            };
        };
        NextView::Question {
            session_id: id.to_string(),
            progress,
            question: Box::new(self.render(q)),
        }
    }

    fn render(&self, q: &Question) -> QuestionView {
        let u = self.corpus.utterance(&q.utterance_id).expect("question of a known utterance");
        let schema = self.corpus.schema_of(u);
        let tables = schema
            .tables
            .iter()
            .map(|t| TableView {
                name: t.name.clone(),
                description: t.description.clone(),
                columns: t
                    .columns
                    .iter()
                    .map(|c| ColumnView {
                        name: c.name.clone(),
                        ty: serde_json::to_value(c.ty)
                            .ok()
                            .and_then(|v| v.as_str().map(str::to_string))
                            .unwrap_or_default(),
                        primary_key: c.primary_key,
                    })
                    .collect(),
                rows: q
                    .db
                    .tables
                    .iter()
                    .find(|dt| dt.name.eq_ignore_ascii_case(&t.name))
                    .map(|dt| dt.rows.clone())
                    .unwrap_or_default(),
            })
            .collect();
        QuestionView {
            question_id: q.id.clone(),
            round: q.round,
            max_rounds: self.cfg.max_rounds,
            time_limit_secs: QUESTION_TIME_LIMIT_SECS,
            utterance_id: q.utterance_id.clone(),
            utterance: u.text.clone(),
            schema_description: self.corpus.descriptions.get(&schema.id).cloned(),
            tables,
            foreign_keys: schema
                .foreign_keys
                .iter()
                .map(|fk| ForeignKeyView {
                    from: format!("{}.{}", fk.child_table, fk.child_column),
                    to: format!("{}.{}", fk.parent_table, fk.parent_column),
                })
                .collect(),
            options: q
                .display_permutation
                .iter()
                .map(|&i| render_option(i, &q.options[i]))
                .collect(),
        }
    }

    /// The open question of a session, or `Done`.
    pub fn next(&self, session_id: &str, token: Option<&str>) -> Result<NextView, ServiceError> {
        let mut st = self.state.lock().expect("state lock");
        let s = Self::session(&mut st, session_id, token)?;
        self.advance(s);
        Ok(self.view(session_id, s))
    }

    /// Records a response to the open question and returns what comes next.
    /// Rejected responses leave the session untouched.
    pub fn respond(&self, session_id: &str, token: Option<&str>, body: ResponseBody) -> Result<NextView, ServiceError> {
        let mut guard = self.state.lock().expect("state lock");
        let st = &mut *guard;
        let s = Self::session(st, session_id, token)?;
        self.advance(s);
        self.check_response(s, &body)?;
        let utterance_id = s.utterances[s.cursor].id.clone();
        let record = ResponseRecord {
            question_id: body.question_id,
            annotator_id: s.annotator_id.clone(),
            response: body.response,
            free_text_ambiguous: body.free_text.ambiguous,
            free_text_confusing: body.free_text.confusing,
            free_text_expected: body.free_text.expected,
            elapsed_ms: body.elapsed_ms,
        };
        st.log.append(session_id, EventKind::ResponseRecorded { utterance_id, record: record.clone() })?;
        let s = st.sessions.get_mut(session_id).expect("session checked above");
        self.record_response(s, record);
        self.advance(s);
        Ok(self.view(session_id, s))
    }

    /// Every recorded response, sessions in creation order.
    pub fn transcripts(&self) -> Vec<TranscriptEntry> {
        let st = self.state.lock().expect("state lock");
        st.order
            .iter()
            .flat_map(|id| st.sessions[id].utterances.iter())
            .flat_map(|u| u.entries.iter().cloned())
            .collect()
    }

    fn observations(st: &State) -> HashMap<&str, Vec<Observation>> {
        let mut by_utt: HashMap<&str, Vec<Observation>> = HashMap::new();
        for id in &st.order {
            for u in &st.sessions[id].utterances {
                for e in &u.entries {
                    let Answer::Choice(r) = e.response.response else { continue };
                    by_utt.entry(u.id.as_str()).or_default().push(Observation {
                        annotator: e.response.annotator_id.clone(),
                        assignment: e.question.assignment.clone(),
                        k: e.question.k(),
                        response: r,
                    });
                }
            }
        }
        by_utt
    }

    fn aggregate(&self, utterance_id: &str, observations: Vec<Observation>, params: &AnnotatorParams) -> PosteriorView {
        let entry = &self.store.pools[utterance_id];
        let domain = self
            .problem(utterance_id)
            .map(|p| p.domain_id.to_string())
            .unwrap_or_default();
        let responses = observations.len();
        let data = UtteranceData {
            utterance_id: utterance_id.to_string(),
            domain,
            prior: entry.pool.prior().weights,
            observations,
            gold: None,
            difficulty: None,
        };
        let weights = utterance_posterior(&data, params);
        let map = Belief::from_weights(weights.clone()).map_cluster();
        PosteriorView {
            utterance_id: utterance_id.to_string(),
            map_sql: map.map(|c| entry.pool.clusters[c.0].representative_sql.clone()),
            responses,
            posterior: entry
                .pool
                .clusters
                .iter()
                .zip(weights)
                .map(|(c, weight)| WeightedSql {
                    sql: c.representative_sql.clone(),
                    weight,
                })
                .collect(),
        }
    }

    /// Posterior over an utterance's clusters given every response from
    /// every session.
    pub fn posterior(&self, utterance_id: &str) -> Result<PosteriorView, ServiceError> {
        if !self.store.pools.contains_key(utterance_id) {
            return Err(ServiceError::UnknownUtterance(utterance_id.to_string()));
        }
        let st = self.state.lock().expect("state lock");
        let obs = Self::observations(&st).remove(utterance_id).unwrap_or_default();
        Ok(self.aggregate(utterance_id, obs, &params_of(&self.model)))
    }

    /// One JSON line per utterance, corpus order.
    pub fn export(&self) -> String {
        let st = self.state.lock().expect("state lock");
        let mut obs = Self::observations(&st);
        let params = params_of(&self.model);
        let mut out = String::new();
        for u in &self.corpus.utterances {
            if !self.store.pools.contains_key(&u.id) {
                continue;
            }
            let view = self.aggregate(&u.id, obs.remove(u.id.as_str()).unwrap_or_default(), &params);
            let line = ExportLine {
                utterance_id: view.utterance_id,
                map_sql: view.map_sql,
                posterior: view.posterior,
            };
            out.push_str(&serde_json::to_string(&line).expect("export serializes"));
            out.push('\n');
        }
        out
    }
}
