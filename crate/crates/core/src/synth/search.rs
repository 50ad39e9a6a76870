//! Fuzz-then-drop: start from the most informative of many random
//! databases, then repeatedly delete a few records while keeping the
//! information gain high, and return the best small database seen.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::infogain::{expected_information_gain, IgOutcome, TruncatedBelief};
use crate::relational::denotation::denotations_equal;
use crate::relational::engine::Executor;
use crate::relational::repair::{drop_orphans, repair_database, RepairConfig};
use crate::relational::{Database, RecordRef, Schema};
use crate::seeding;

use super::fuzz::fuzz_database;
use super::prune::prune_database;
use super::SynthConfig;

/// Gains at or below this are treated as zero.
pub const IG_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthFailure {
    #[error("no database separates the candidates")]
    IgZero,
    #[error("synthesis budget exhausted")]
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub size: usize,
    pub ig_bits: f64,
    /// Drop variants scored before moving on.
    pub tries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub fuzz_candidates: usize,
    pub start_from_sample: bool,
    pub levels: Vec<LevelTrace>,
    /// Index into `levels` of the database this restart returned, if any
    /// level fit the cap.
    pub chosen_level: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptTrace {
    pub config: u8,
    pub restarts: Vec<RestartTrace>,
    pub chosen_restart: Option<usize>,
    pub outcome: Option<SynthFailure>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthTrace {
    pub attempts: Vec<AttemptTrace>,
    /// Set when pruning changed a representative's output and was undone.
    pub pruning_reverted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthResult {
    /// The question database, pruned to the identifiers the candidates use.
    pub db: Database,
    pub ig_bits: f64,
    pub normal_ig_bits: f64,
    pub config_used: u8,
    pub trace: SynthTrace,
}

struct Scored {
    db: Database,
    outcome: IgOutcome,
    /// Discovery order within a restart.
    order: usize,
}

/// Larger is better: separates real candidates, then higher IG, then fewer
/// records, then found earlier.
fn better(a: &Scored, b: &Scored) -> Ordering {
    let sep = |s: &Scored| s.outcome.normal_ig_bits > IG_EPS;
    sep(a)
        .cmp(&sep(b))
        .then(a.outcome.ig_bits.total_cmp(&b.outcome.ig_bits))
        .then(b.db.size().cmp(&a.db.size()))
        .then(b.order.cmp(&a.order))
}

fn score(tb: &TruncatedBelief, db: &Database, exec: &mut Executor, e: f64) -> IgOutcome {
    expected_information_gain(tb, db, exec, e)
}

struct RestartOutcome {
    best: Option<Scored>,
    trace: RestartTrace,
    timed_out: bool,
}

fn run_restart(
    tb: &TruncatedBelief,
    schema: &Schema,
    sample_db: &Database,
    cfg: &SynthConfig,
    restart: usize,
    deadline: Option<Instant>,
) -> RestartOutcome {
    let seed = seeding::derive(cfg.seed, restart as u64);
    let fuzz_cfg = cfg.fuzz_config();
    let e = cfg.error_rate;
    let expired = || deadline.is_some_and(|d| Instant::now() >= d);

    let mut starts: Vec<Database> = Vec::with_capacity(cfg.n_fuzz + 1);
    if cfg.tweak_init_sample_db {
        starts.push(
            repair_database(sample_db, schema, &RepairConfig::default()).unwrap_or_else(|_| sample_db.clone()),
        );
    }
    starts.extend(
        (0..cfg.n_fuzz)
            .filter_map(|i| fuzz_database(schema, sample_db, &fuzz_cfg, seeding::derive(seed, i as u64)).ok()),
    );
    let mut trace = RestartTrace {
        fuzz_candidates: starts.len(),
        start_from_sample: cfg.tweak_init_sample_db,
        levels: Vec::new(),
        chosen_level: None,
    };
    let scored: Vec<Option<IgOutcome>> = starts
        .par_iter()
        .map_init(
            || Executor::with_timeout(schema, cfg.query_timeout).ok(),
            |exec, db| exec.as_mut().map(|ex| score(tb, db, ex, e)),
        )
        .collect();
    let Ok(mut exec) = Executor::with_timeout(schema, cfg.query_timeout) else {
        return RestartOutcome { best: None, trace, timed_out: false };
    };
    let mut current: Option<Scored> = None;
    for (order, (db, outcome)) in starts.into_iter().zip(scored).enumerate() {
        let Some(outcome) = outcome else { continue };
        let cand = Scored { db, outcome, order };
        // The start keeps discovery order as its tie-break and ignores size.
        let wins = match &current {
            None => true,
            Some(c) => {
                let sep = |s: &Scored| s.outcome.normal_ig_bits > IG_EPS;
                sep(&cand)
                    .cmp(&sep(c))
                    .then(cand.outcome.ig_bits.total_cmp(&c.outcome.ig_bits))
                    == Ordering::Greater
            }
        };
        if wins {
            current = Some(cand);
        }
    }
    let Some(mut current) = current else {
        return RestartOutcome { best: None, trace, timed_out: false };
    };
    current.order = 0;

    let mut rng = seeding::rng(seeding::derive_str(seed, "drop"));
    let mut best: Option<Scored> = None;
    let mut discovered = 0usize;
    let mut timed_out = false;
    loop {
        let size = current.db.size();
        trace.levels.push(LevelTrace {
            size,
            ig_bits: current.outcome.ig_bits,
            tries: 0,
        });
        if size <= cfg.cap() && best.as_ref().is_none_or(|b| better(&current, b) == Ordering::Greater) {
            trace.chosen_level = Some(trace.levels.len() - 1);
            best = Some(Scored {
                db: current.db.clone(),
                outcome: current.outcome.clone(),
                order: current.order,
            });
        }
        if size == 0 {
            break;
        }
        if expired() {
            timed_out = true;
            break;
        }
        let k = ((size as f64 * cfg.drop_fraction).ceil() as usize).clamp(1, size);
        let records: Vec<RecordRef> = current.db.records().collect();
        let mut level_best: Option<Scored> = None;
        let mut tries = 0;
        for _ in 0..cfg.drop_tries {
            tries += 1;
            discovered += 1;
            let drop: HashSet<RecordRef> = sample(&mut rng, records.len(), k)
                .into_iter()
                .map(|i| records[i])
                .collect();
            let db = drop_orphans(current.db.without(&drop), schema);
            let outcome = score(tb, &db, &mut exec, e);
            let variant = Scored { db, outcome, order: discovered };
            let improves = variant.outcome.ig_bits > current.outcome.ig_bits;
            let replace = match &level_best {
                None => true,
                Some(b) => {
                    variant
                        .outcome
                        .ig_bits
                        .total_cmp(&b.outcome.ig_bits)
                        .then(b.db.size().cmp(&variant.db.size()))
                        == Ordering::Greater
                }
            };
            if replace {
                level_best = Some(variant);
            }
            if improves {
                break;
            }
        }
        trace.levels.last_mut().expect("pushed above").tries = tries;
        current = level_best.expect("drop_tries > 0");
    }
    RestartOutcome { best, trace, timed_out }
}

/// Runs the search under one configuration. See [`synthesize_question_db`]
/// for the cascade over configurations.
pub fn fuzz_then_drop(
    tb: &TruncatedBelief,
    schema: &Schema,
    sample_db: &Database,
    cfg: &SynthConfig,
) -> Result<SynthResult, SynthFailure> {
    let mut trace = SynthTrace::default();
    let out = attempt(tb, schema, sample_db, cfg, None, &mut trace);
    out.map(|(db, outcome)| finish(tb, schema, db, outcome, cfg.config_index(), trace))
}

fn attempt(
    tb: &TruncatedBelief,
    schema: &Schema,
    sample_db: &Database,
    cfg: &SynthConfig,
    deadline: Option<Instant>,
    trace: &mut SynthTrace,
) -> Result<(Database, IgOutcome), SynthFailure> {
    let outcomes: Vec<RestartOutcome> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| run_restart(tb, schema, sample_db, cfg, r, deadline))
        .collect();
    let timed_out = outcomes.iter().any(|o| o.timed_out);
    let mut chosen: Option<(usize, Scored)> = None;
    let mut restarts = Vec::with_capacity(outcomes.len());
    for (ri, o) in outcomes.into_iter().enumerate() {
        restarts.push(o.trace);
        let Some(mut s) = o.best else { continue };
        s.order = ri;
        if chosen.as_ref().is_none_or(|(_, c)| better(&s, c) == Ordering::Greater) {
            chosen = Some((ri, s));
        }
    }
    let chosen_restart = chosen.as_ref().map(|(ri, _)| *ri);
    let result = match chosen {
        _ if timed_out => Err(SynthFailure::Timeout),
        Some((_, s)) if s.outcome.normal_ig_bits > IG_EPS => Ok(s),
        _ => Err(SynthFailure::IgZero),
    };
    trace.attempts.push(AttemptTrace {
        config: cfg.config_index(),
        restarts,
        chosen_restart: chosen_restart.filter(|_| result.is_ok()),
        outcome: result.as_ref().err().copied(),
    });
    result.map(|s| (s.db, s.outcome))
}

fn finish(
    tb: &TruncatedBelief,
    schema: &Schema,
    db: Database,
    outcome: IgOutcome,
    config_used: u8,
    mut trace: SynthTrace,
) -> SynthResult {
    let reps: Vec<&str> = tb.normal_clusters().map(|(_, e)| e.sql.as_str()).collect();
    let pruned = prune_database(&db, reps.iter().copied());
    let sound = Executor::new(schema).ok().is_some_and(|mut ex| {
        let before: Vec<_> = reps.iter().map(|s| ex.execute_on(s, &db).ok()).collect();
        let after: Vec<_> = reps.iter().map(|s| ex.execute_on(s, &pruned).ok()).collect();
        before.iter().zip(&after).all(|(b, a)| match (b, a) {
            (Some(b), Some(a)) => denotations_equal(b, a),
            (None, None) => true,
            _ => false,
        })
    });
    let (db, outcome) = if sound {
        (pruned, outcome)
    } else {
        log::warn!("pruning changed a representative's output; keeping the full database");
        trace.pruning_reverted = true;
        (db, outcome)
    };
    SynthResult {
        db,
        ig_bits: outcome.ig_bits,
        normal_ig_bits: outcome.normal_ig_bits,
        config_used,
        trace,
    }
}

/// Tries configurations 7 down to 0 (strictest first) until one yields a
/// database that separates some real candidates. Fails with
/// [`SynthFailure::Timeout`] once `base_cfg.budget` is spent.
pub fn synthesize_question_db(
    tb: &TruncatedBelief,
    schema: &Schema,
    sample_db: &Database,
    base_cfg: &SynthConfig,
) -> Result<SynthResult, SynthFailure> {
    synthesize_with_trace(tb, schema, sample_db, base_cfg).0
}

/// Like [`synthesize_question_db`], also returning the trace of failed
/// searches.
pub fn synthesize_with_trace(
    tb: &TruncatedBelief,
    schema: &Schema,
    sample_db: &Database,
    base_cfg: &SynthConfig,
) -> (Result<SynthResult, SynthFailure>, SynthTrace) {
    let deadline = Instant::now().checked_add(base_cfg.budget);
    let mut trace = SynthTrace::default();
    for c in (0..8u8).rev() {
        let cfg = base_cfg.with_config_index(c);
        match attempt(tb, schema, sample_db, &cfg, deadline, &mut trace) {
            Ok((db, outcome)) => {
                let r = finish(tb, schema, db, outcome, c, trace.clone());
                return (Ok(r), trace);
            }
            Err(SynthFailure::Timeout) => return (Err(SynthFailure::Timeout), trace),
            Err(SynthFailure::IgZero) => continue,
        }
    }
    (Err(SynthFailure::IgZero), trace)
}
