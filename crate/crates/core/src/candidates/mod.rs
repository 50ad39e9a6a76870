//! Candidate programs: ingestion, executability filtering, equivalence
//! clustering, prior construction, neighbor queries, and prompts for an
//! external generator.

pub mod generator;
pub mod neighbors;
pub mod pool;
pub mod prompt;

use serde::{Deserialize, Serialize};

pub use generator::{sample_candidates, CandidateGenerator, GeneratorError, SamplingPlan};
pub use neighbors::neighbor_queries;
pub use pool::{
    build_neighbors, build_pool, cluster_candidates, equivalent_cluster, filter_executable, CandidateCluster,
    CandidateKind, CandidatePool, ClusterConfig, ClusterOutcome, DroppedCandidate, RawCandidate,
};
pub use prompt::{build_prompt, ExamplePair, PromptError};

/// A natural-language request to annotate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub schema_id: String,
    /// Reference program, used only for evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sql: Option<String>,
    /// Optional difficulty tag carried through to reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<String>,
}
