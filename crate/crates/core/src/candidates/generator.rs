use std::collections::BTreeMap;

use rand::SeedableRng;
use thiserror::Error;

use crate::relational::Schema;
use crate::seeding;

use super::prompt::{build_prompt, sample_shot_count, ExamplePair, PromptError};
use super::{RawCandidate, Utterance};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("candidate generator failed: {0}")]
    Backend(String),
}

/// A source of program completions for a prompt (e.g. a hosted language
/// model). The pipeline itself only ever reads candidate files.
pub trait CandidateGenerator {
    fn complete(&self, prompt: &str, n: usize) -> Result<Vec<String>, GeneratorError>;
}

#[derive(Debug, Clone, Copy)]
pub struct SamplingPlan {
    pub prompts: usize,
    pub completions_per_prompt: usize,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            prompts: 200,
            completions_per_prompt: 20,
        }
    }
}

/// Samples `plan.prompts` prompts (4 or 8 shots each) and tallies identical
/// completions into raw candidates. Completions are continuations of a
/// trailing `SELECT`, so the keyword is restored when missing.
pub fn sample_candidates(
    generator: &dyn CandidateGenerator,
    utterance: &Utterance,
    schema: &Schema,
    pool: &[ExamplePair],
    plan: SamplingPlan,
    seed: u64,
) -> Result<Vec<RawCandidate>, GeneratorError> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut order = Vec::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seeding::derive_str(seed, &utterance.id));
    for p in 0..plan.prompts {
        let k = sample_shot_count(&mut rng).min(pool.len());
        let prompt = build_prompt(utterance, schema, pool, k, seeding::derive(seed, p as u64))?;
        for completion in generator.complete(&prompt, plan.completions_per_prompt)? {
            let body = completion.split(';').next().unwrap_or("").trim().to_string();
            if body.is_empty() {
                continue;
            }
            let sql = if body.to_ascii_uppercase().starts_with("SELECT") {
                body
            } else {
                format!("SELECT {body}")
            };
            if !counts.contains_key(&sql) {
                order.push(sql.clone());
            }
            *counts.entry(sql).or_insert(0) += 1;
        }
    }
    Ok(order
        .into_iter()
        .map(|sql| RawCandidate {
            utterance_id: utterance.id.clone(),
            count: counts[&sql],
            sql,
        })
        .collect())
}
