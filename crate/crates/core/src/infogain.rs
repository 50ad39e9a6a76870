//! Beliefs over candidate clusters, entropy, and expected information gain of
//! an output-selection question.

use serde::{Deserialize, Serialize};

use crate::relational::denotation::{denotations_equal, Denotation};
use crate::response_model::{likelihood, ResponseId};

/// Maximum number of displayed outputs per question.
pub const MAX_OPTIONS: usize = 6;
/// Number of normal clusters kept when truncating a belief.
pub const TRUNCATION_SIZE: usize = 16;

/// Index of a candidate cluster within its utterance's pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub usize);

/// Posterior `p_t` over an utterance's clusters, indexed by [`ClusterId`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub weights: Vec<f64>,
    pub round: usize,
    /// `(question id, response)` per completed round.
    pub history: Vec<(String, ResponseId)>,
}

impl Belief {
    pub fn from_weights(weights: Vec<f64>) -> Self {
        Belief {
            weights,
            round: 0,
            history: Vec::new(),
        }
    }

    pub fn uniform(n: usize) -> Self {
        Belief::from_weights(vec![1.0 / n as f64; n])
    }

    /// Highest-weight cluster, ties to the lower id.
    pub fn map_cluster(&self) -> Option<ClusterId> {
        let mut best: Option<(usize, f64)> = None;
        for (i, w) in self.weights.iter().enumerate() {
            if best.is_none_or(|(_, b)| *w > b) {
                best = Some((i, *w));
            }
        }
        best.map(|(i, _)| ClusterId(i))
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// Cluster ids by descending weight, ties to the lower id.
    pub fn ranking(&self) -> Vec<ClusterId> {
        let mut ids: Vec<usize> = (0..self.weights.len()).collect();
        ids.sort_by(|a, b| {
            self.weights[*b]
                .total_cmp(&self.weights[*a])
                .then(a.cmp(b))
        });
        ids.into_iter().map(ClusterId).collect()
    }

    pub fn is_valid(&self) -> bool {
        let total: f64 = self.weights.iter().sum();
        (total - 1.0).abs() <= 1e-9
            && self.weights.iter().all(|w| *w >= 0.0 && w.is_finite())
            && self.history.len() == self.round
    }
}

/// Shannon entropy in bits with `0 log 0 = 0`.
pub fn entropy(weights: &[f64]) -> f64 {
    weights
        .iter()
        .filter(|w| **w > 0.0)
        .map(|w| -w * w.log2())
        .sum()
}

/// What a truncated-belief entry stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum EntrySource {
    Cluster(ClusterId),
    ReturnNull,
    /// Index into the utterance's neighbor clusters.
    Neighbor(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedEntry {
    pub source: EntrySource,
    pub sql: String,
    pub weight: f64,
}

/// `p'`: the top clusters of a belief plus pseudo-candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedBelief {
    pub entries: Vec<TruncatedEntry>,
    pub source_round: usize,
}

impl TruncatedBelief {
    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    pub fn normal_clusters(&self) -> impl Iterator<Item = (ClusterId, &TruncatedEntry)> {
        self.entries.iter().filter_map(|e| match e.source {
            EntrySource::Cluster(c) => Some((c, e)),
            _ => None,
        })
    }

    pub fn is_normal(&self, idx: usize) -> bool {
        matches!(self.entries[idx].source, EntrySource::Cluster(_))
    }
}

/// A neighbor pseudo-candidate and the clusters whose representatives it was
/// derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub sql: String,
    pub sources: Vec<ClusterId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruncationConfig {
    pub top_k: usize,
    pub eps_null: f64,
    pub eps_neighbor_total: f64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig {
            top_k: TRUNCATION_SIZE,
            eps_null: 0.01,
            eps_neighbor_total: 0.04,
        }
    }
}

/// SQL of the RETURN-NULL pseudo-candidate.
pub const RETURN_NULL_SQL: &str = "SELECT NULL";

/// Keeps the `top_k` positive-weight clusters (ties to the lower id),
/// rescales them to `1 - eps_null - eps_neighbor_total`, and adds the
/// RETURN-NULL and neighbor pseudo-candidates. Neighbor mass is shared evenly
/// among neighbors derived from a retained cluster; with none, it goes back
/// to the normal clusters.
pub fn truncate(
    belief: &Belief,
    representatives: &[String],
    neighbors: &[NeighborEntry],
    cfg: &TruncationConfig,
) -> TruncatedBelief {
    let kept: Vec<ClusterId> = belief
        .ranking()
        .into_iter()
        .filter(|c| belief.weights[c.0] > 0.0)
        .take(cfg.top_k)
        .collect();
    let live: Vec<usize> = neighbors
        .iter()
        .enumerate()
        .filter(|(_, n)| n.sources.iter().any(|s| kept.contains(s)))
        .map(|(i, _)| i)
        .collect();
    let neighbor_mass = if live.is_empty() { 0.0 } else { cfg.eps_neighbor_total };
    let normal_mass = 1.0 - cfg.eps_null - neighbor_mass;
    let kept_total: f64 = kept.iter().map(|c| belief.weights[c.0]).sum();
    let mut entries: Vec<TruncatedEntry> = kept
        .iter()
        .map(|c| TruncatedEntry {
            source: EntrySource::Cluster(*c),
            sql: representatives[c.0].clone(),
            weight: belief.weights[c.0] / kept_total * normal_mass,
        })
        .collect();
    if cfg.eps_null > 0.0 {
        entries.push(TruncatedEntry {
            source: EntrySource::ReturnNull,
            sql: RETURN_NULL_SQL.to_string(),
            weight: cfg.eps_null,
        });
    }
    for i in &live {
        entries.push(TruncatedEntry {
            source: EntrySource::Neighbor(*i),
            sql: neighbors[*i].sql.clone(),
            weight: neighbor_mass / live.len() as f64,
        });
    }
    TruncatedBelief {
        entries,
        source_round: belief.round,
    }
}

/// Posterior over hypotheses after observing `response`, given each
/// hypothesis's correct response. Returns `None` when every hypothesis has
/// zero likelihood.
pub fn posterior(
    weights: &[f64],
    correct: &[ResponseId],
    k: usize,
    e: f64,
    response: ResponseId,
) -> Option<Vec<f64>> {
    let unnorm: Vec<f64> = weights
        .iter()
        .zip(correct)
        .map(|(w, c)| w * likelihood(response, *c, k, e))
        .collect();
    let z: f64 = unnorm.iter().sum();
    if z <= 0.0 || !z.is_finite() {
        return None;
    }
    Some(unnorm.into_iter().map(|u| u / z).collect())
}

/// Predicted distribution over the `k + 1` responses.
pub fn response_marginal(weights: &[f64], correct: &[ResponseId], k: usize, e: f64) -> Vec<f64> {
    let mut out = vec![0.0; k + 1];
    for (w, c) in weights.iter().zip(correct) {
        for (slot, p) in out.iter_mut().enumerate() {
            *p += w * likelihood(ResponseId::from_slot(slot, k), *c, k, e);
        }
    }
    out
}

/// `H(p) - E_r[H(p | r)]` for hypotheses with weights `weights` whose
/// correct responses are `correct`, when `k` options are displayed and the
/// annotator error rate is `e`.
pub fn information_gain(weights: &[f64], correct: &[ResponseId], k: usize, e: f64) -> f64 {
    let prior_h = entropy(weights);
    let marginal = response_marginal(weights, correct, k, e);
    let mut expected_h = 0.0;
    for (slot, pr) in marginal.iter().enumerate() {
        if *pr <= 0.0 {
            continue;
        }
        if let Some(post) = posterior(weights, correct, k, e, ResponseId::from_slot(slot, k)) {
            expected_h += pr * entropy(&post);
        }
    }
    prior_h - expected_h
}

/// The displayed outputs of a question and the response each hypothesis
/// makes correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionPartition {
    /// Distinct outputs ranked by total mass (ties to first appearance).
    pub options: Vec<Denotation>,
    /// Per input entry: its option, or NONE when it errored or its output was
    /// cut by the display cap.
    pub assignment: Vec<ResponseId>,
    /// Total mass per option.
    pub option_mass: Vec<f64>,
}

impl OptionPartition {
    pub fn k(&self) -> usize {
        self.options.len()
    }
}

/// Groups outputs by [`denotations_equal`], ranks groups by total weight and
/// keeps at most `max_options` of them. Errors (`None` outputs) never become
/// options.
pub fn partition_outputs(
    outputs: &[Option<Denotation>],
    weights: &[f64],
    max_options: usize,
) -> OptionPartition {
    let mut groups: Vec<(usize, f64, Vec<usize>)> = Vec::new();
    for (i, out) in outputs.iter().enumerate() {
        let Some(d) = out else { continue };
        match groups
            .iter_mut()
            .find(|(rep, _, _)| denotations_equal(outputs[*rep].as_ref().unwrap(), d))
        {
            Some(g) => {
                g.1 += weights[i];
                g.2.push(i);
            }
            None => groups.push((i, weights[i], vec![i])),
        }
    }
    groups.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    groups.truncate(max_options);
    let mut assignment = vec![ResponseId::None; outputs.len()];
    let mut options = Vec::with_capacity(groups.len());
    let mut option_mass = Vec::with_capacity(groups.len());
    for (oi, (rep, mass, members)) in groups.iter().enumerate() {
        for m in members {
            assignment[*m] = ResponseId::Option(oi);
        }
        options.push(outputs[*rep].clone().unwrap());
        option_mass.push(*mass);
    }
    OptionPartition {
        options,
        assignment,
        option_mass,
    }
}

/// Entropy of the distribution over responses induced by the partition
/// alone (what a perfect annotator reveals).
pub fn partition_entropy(weights: &[f64], correct: &[ResponseId], k: usize) -> f64 {
    let mut mass = vec![0.0; k + 1];
    for (w, c) in weights.iter().zip(correct) {
        mass[c.slot(k)] += w;
    }
    entropy(&mass)
}

#[cfg(feature = "engine")]
mod engine_ig {
    use super::*;
    use crate::relational::database::Database;
    use crate::relational::engine::Executor;

    /// IG of asking about `db`, with the option set a question would display.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct IgOutcome {
        pub ig_bits: f64,
        /// IG restricted to the normal clusters (pseudo-candidates removed and
        /// the rest renormalized). Zero means the question cannot tell any
        /// two real candidates apart.
        pub normal_ig_bits: f64,
        pub partition: OptionPartition,
    }

    /// Executes every entry of `p′` on `db` and scores the resulting question.
    pub fn expected_information_gain(
        tb: &TruncatedBelief,
        db: &Database,
        exec: &mut Executor,
        e: f64,
    ) -> IgOutcome {
        let outputs = match exec.load(db) {
            Ok(()) => tb
                .entries
                .iter()
                .map(|en| exec.run(&en.sql).ok())
                .collect(),
            Err(_) => vec![None; tb.entries.len()],
        };
        score_outputs(tb, &outputs, e)
    }

    /// Scores precomputed outputs (one per entry of `tb`).
    pub fn score_outputs(tb: &TruncatedBelief, outputs: &[Option<Denotation>], e: f64) -> IgOutcome {
        let weights = tb.weights();
        let partition = partition_outputs(outputs, &weights, MAX_OPTIONS);
        let k = partition.k();
        let ig_bits = information_gain(&weights, &partition.assignment, k, e);
        let (nw, nc): (Vec<f64>, Vec<ResponseId>) = (0..tb.entries.len())
            .filter(|i| tb.is_normal(*i))
            .map(|i| (weights[i], partition.assignment[i]))
            .unzip();
        let z: f64 = nw.iter().sum();
        let normal_ig_bits = if z > 0.0 {
            let nw: Vec<f64> = nw.iter().map(|w| w / z).collect();
            information_gain(&nw, &nc, k, e)
        } else {
            0.0
        };
        IgOutcome {
            ig_bits,
            normal_ig_bits,
            partition,
        }
    }
}

#[cfg(feature = "engine")]
pub use engine_ig::{expected_information_gain, score_outputs, IgOutcome};
