use std::collections::HashMap;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::infogain::{Belief, ClusterId, NeighborEntry};
use crate::relational::denotation::{denotations_equal, Denotation};
use crate::relational::engine::{ExecutionError, Executor, DEFAULT_TIMEOUT};
use crate::relational::{Database, Schema};
use crate::seeding;
use crate::synth::fuzz::{fuzz_database, FuzzConfig};

use super::neighbors::neighbor_queries;

/// One sampled program and how many times it was sampled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCandidate {
    pub utterance_id: String,
    pub sql: String,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Normal,
    ReturnNull,
    Neighbor,
}

/// An execution-equivalence class of candidate programs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCluster {
    pub id: ClusterId,
    pub representative_sql: String,
    pub member_sqls: Vec<String>,
    pub count: u64,
    pub weight: f64,
    pub kind: CandidateKind,
}

/// A candidate dropped from the pool and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub sql: String,
    pub reason: String,
}

/// Everything the interaction needs about one utterance's candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub utterance_id: String,
    pub schema_id: String,
    pub clusters: Vec<CandidateCluster>,
    #[serde(default)]
    pub neighbors: Vec<NeighborEntry>,
    #[serde(default)]
    pub dropped: Vec<DroppedCandidate>,
}

impl CandidatePool {
    /// The prior `p₀`.
    pub fn prior(&self) -> Belief {
        Belief::from_weights(self.clusters.iter().map(|c| c.weight).collect())
    }

    pub fn representatives(&self) -> Vec<String> {
        self.clusters
            .iter()
            .map(|c| c.representative_sql.clone())
            .collect()
    }

    pub fn cluster(&self, id: ClusterId) -> &CandidateCluster {
        &self.clusters[id.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Number of fuzzed databases (the sample database is always used too).
    pub n_dbs: usize,
    pub seed: u64,
    pub fuzz: FuzzConfig,
    /// Fuzzed databases used to group neighbor queries among themselves.
    pub neighbor_dbs: usize,
    #[serde(with = "duration_ms")]
    pub timeout: Duration,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            n_dbs: 1000,
            seed: 0,
            fuzz: FuzzConfig {
                enforce_unique: false,
                ..FuzzConfig::default()
            },
            neighbor_dbs: 64,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

pub(crate) mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Keeps the candidates that execute on `sample_db` within budget.
pub fn filter_executable(
    cands: &[RawCandidate],
    schema: &Schema,
    sample_db: &Database,
    timeout: Duration,
) -> (Vec<RawCandidate>, Vec<DroppedCandidate>) {
    let mut exec = match Executor::with_timeout(schema, timeout) {
        Ok(e) => e,
        Err(e) => {
            let reason = e.to_string();
            return (
                Vec::new(),
                cands
                    .iter()
                    .map(|c| DroppedCandidate { sql: c.sql.clone(), reason: reason.clone() })
                    .collect(),
            );
        }
    };
    if let Err(e) = exec.load(sample_db) {
        let reason = e.to_string();
        return (
            Vec::new(),
            cands
                .iter()
                .map(|c| DroppedCandidate { sql: c.sql.clone(), reason: reason.clone() })
                .collect(),
        );
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for c in cands {
        match exec.run(&c.sql) {
            Ok(_) => kept.push(c.clone()),
            Err(e) => dropped.push(DroppedCandidate {
                sql: c.sql.clone(),
                reason: e.to_string(),
            }),
        }
    }
    (kept, dropped)
}

/// The databases equivalence is tested on: `sample_db` first, then
/// `n_dbs` fuzzed ones. Database `i ≥ 1` depends only on `(seed, i)`, so
/// smaller suites are prefixes of larger ones.
pub fn test_suite_db(
    index: usize,
    schema: &Schema,
    sample_db: &Database,
    fuzz: &FuzzConfig,
    seed: u64,
) -> Option<Database> {
    if index == 0 {
        return Some(sample_db.clone());
    }
    fuzz_database(schema, sample_db, fuzz, seeding::derive(seed, index as u64)).ok()
}

const CHUNK: usize = 32;

/// Output of every program on every test database, refined into groups that
/// agree everywhere. Programs that fail on some database are reported in the
/// second return value and excluded from the groups.
fn refine_by_execution(
    sqls: &[String],
    schema: &Schema,
    sample_db: &Database,
    n_dbs: usize,
    fuzz: &FuzzConfig,
    seed: u64,
    timeout: Duration,
) -> (Vec<Vec<usize>>, Vec<(usize, ExecutionError)>) {
    let n = sqls.len();
    let mut groups: Vec<Vec<usize>> = if n == 0 { Vec::new() } else { vec![(0..n).collect()] };
    let mut failed: Vec<Option<ExecutionError>> = vec![None; n];
    let total = n_dbs + 1;
    let mut start = 0;
    while start < total && n > 0 {
        let end = (start + CHUNK).min(total);
        let results: Vec<Option<Vec<Result<Denotation, ExecutionError>>>> = (start..end)
            .into_par_iter()
            .map_init(
                || Executor::with_timeout(schema, timeout).ok(),
                |exec, idx| {
                    let exec = exec.as_mut()?;
                    let db = test_suite_db(idx, schema, sample_db, fuzz, seed)?;
                    exec.load(&db).ok()?;
                    Some(sqls.iter().map(|s| exec.run(s)).collect())
                },
            )
            .collect();
        for outputs in results.into_iter().flatten() {
            for (i, out) in outputs.iter().enumerate() {
                if let (Err(e), None) = (out, &failed[i]) {
                    failed[i] = Some(e.clone());
                }
            }
            let mut next = Vec::with_capacity(groups.len());
            for g in &groups {
                let mut subs: Vec<Vec<usize>> = Vec::new();
                for &m in g {
                    if failed[m].is_some() {
                        continue;
                    }
                    let d = outputs[m].as_ref().expect("not failed");
                    match subs.iter_mut().find(|s| {
                        denotations_equal(outputs[s[0]].as_ref().expect("not failed"), d)
                    }) {
                        Some(s) => s.push(m),
                        None => subs.push(vec![m]),
                    }
                }
                next.extend(subs);
            }
            groups = next;
        }
        start = end;
    }
    let failures = failed
        .into_iter()
        .enumerate()
        .filter_map(|(i, f)| f.map(|e| (i, e)))
        .collect();
    (groups, failures)
}

/// Result of clustering one utterance's candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutcome {
    pub clusters: Vec<CandidateCluster>,
    pub dropped: Vec<DroppedCandidate>,
}

/// Groups candidates that agree (by [`denotations_equal`]) on the sample
/// database and on `n_dbs` fuzzed databases. Weights are proportional to
/// summed sample counts; the representative is the member with the highest
/// count, then the shortest text. Clusters are ordered by descending weight
/// and numbered in that order.
pub fn cluster_candidates(
    cands: &[RawCandidate],
    schema: &Schema,
    sample_db: &Database,
    cfg: &ClusterConfig,
) -> ClusterOutcome {
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<String, u64> = HashMap::new();
    for c in cands {
        let sql = c.sql.trim().to_string();
        if !counts.contains_key(&sql) {
            order.push(sql.clone());
        }
        *counts.entry(sql).or_insert(0) += c.count.max(1);
    }
    let (groups, failures) =
        refine_by_execution(&order, schema, sample_db, cfg.n_dbs, &cfg.fuzz, cfg.seed, cfg.timeout);
    let dropped: Vec<DroppedCandidate> = failures
        .into_iter()
        .map(|(i, e)| {
            log::warn!("dropping candidate `{}`: {e}", order[i]);
            DroppedCandidate {
                sql: order[i].clone(),
                reason: e.to_string(),
            }
        })
        .collect();
    let total: u64 = groups.iter().flatten().map(|i| counts[&order[*i]]).sum();
    let mut clusters: Vec<CandidateCluster> = groups
        .into_iter()
        .map(|g| {
            let mut members: Vec<String> = g.iter().map(|i| order[*i].clone()).collect();
            members.sort_by(|a, b| {
                counts[b]
                    .cmp(&counts[a])
                    .then(a.len().cmp(&b.len()))
                    .then(a.cmp(b))
            });
            let count: u64 = members.iter().map(|m| counts[m]).sum();
            CandidateCluster {
                id: ClusterId(0),
                representative_sql: members[0].clone(),
                member_sqls: members,
                count,
                weight: count as f64 / total as f64,
                kind: CandidateKind::Normal,
            }
        })
        .collect();
    clusters.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then(a.representative_sql.cmp(&b.representative_sql))
    });
    for (i, c) in clusters.iter_mut().enumerate() {
        c.id = ClusterId(i);
    }
    ClusterOutcome { clusters, dropped }
}

/// Neighbor queries of every cluster representative, deduplicated, grouped
/// by agreement on a small fuzz suite, and tagged with the clusters they came
/// from. Neighbors equivalent to a real cluster are kept; they still
/// penalize databases on which an operator is not needed.
pub fn build_neighbors(
    clusters: &[CandidateCluster],
    schema: &Schema,
    sample_db: &Database,
    cfg: &ClusterConfig,
) -> Vec<NeighborEntry> {
    let mut sqls: Vec<String> = Vec::new();
    let mut sources: Vec<Vec<ClusterId>> = Vec::new();
    for c in clusters {
        for n in neighbor_queries(&c.representative_sql, schema, sample_db) {
            match sqls.iter().position(|s| *s == n) {
                Some(i) => {
                    if !sources[i].contains(&c.id) {
                        sources[i].push(c.id)
                    }
                }
                None => {
                    sqls.push(n);
                    sources.push(vec![c.id]);
                }
            }
        }
    }
    let (groups, _) = refine_by_execution(
        &sqls,
        schema,
        sample_db,
        cfg.neighbor_dbs,
        &cfg.fuzz,
        seeding::derive_str(cfg.seed, "neighbors"),
        cfg.timeout,
    );
    let mut out: Vec<NeighborEntry> = groups
        .into_iter()
        .map(|g| {
            let mut srcs: Vec<ClusterId> = g.iter().flat_map(|i| sources[*i].clone()).collect();
            srcs.sort();
            srcs.dedup();
            let rep = g
                .iter()
                .map(|i| sqls[*i].clone())
                .min_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)))
                .expect("groups are non-empty");
            NeighborEntry { sql: rep, sources: srcs }
        })
        .collect();
    out.sort_by(|a, b| a.sources.cmp(&b.sources).then(a.sql.cmp(&b.sql)));
    out
}

/// The cluster whose representative agrees with `sql` on the whole test
/// suite, if any. Used to locate the reference program among the clusters.
pub fn equivalent_cluster(
    sql: &str,
    clusters: &[CandidateCluster],
    schema: &Schema,
    sample_db: &Database,
    cfg: &ClusterConfig,
) -> Option<ClusterId> {
    let mut sqls: Vec<String> = clusters.iter().map(|c| c.representative_sql.clone()).collect();
    sqls.push(sql.to_string());
    let target = sqls.len() - 1;
    let (groups, _) = refine_by_execution(&sqls, schema, sample_db, cfg.n_dbs, &cfg.fuzz, cfg.seed, cfg.timeout);
    let group = groups.iter().find(|g| g.contains(&target))?;
    group
        .iter()
        .filter(|i| **i != target)
        .map(|i| clusters[*i].id)
        .min()
}

/// Filter, cluster, and attach neighbors for one utterance.
pub fn build_pool(
    utterance_id: &str,
    cands: &[RawCandidate],
    schema: &Schema,
    sample_db: &Database,
    cfg: &ClusterConfig,
) -> CandidatePool {
    let (exec_ok, mut dropped) = filter_executable(cands, schema, sample_db, cfg.timeout);
    let outcome = cluster_candidates(&exec_ok, schema, sample_db, cfg);
    dropped.extend(outcome.dropped);
    let neighbors = build_neighbors(&outcome.clusters, schema, sample_db, cfg);
    CandidatePool {
        utterance_id: utterance_id.to_string(),
        schema_id: schema.id.clone(),
        clusters: outcome.clusters,
        neighbors,
        dropped,
    }
}
