//! Few-shot prompt construction for an external candidate generator.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::relational::engine::schema_to_ddl;
use crate::relational::Schema;
use crate::seeding;

use super::Utterance;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("example pool has {available} pairs, {requested} requested")]
    PoolTooSmall { available: usize, requested: usize },
}

/// An `(utterance, program)` example pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ExamplePair {
    pub utterance: String,
    pub sql: String,
}

pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// TF-IDF vectors over lowercased unigrams with smoothed idf
/// `ln((1 + N) / (1 + df)) + 1`, where the corpus is the pool plus the query.
pub struct TfIdf {
    idf: HashMap<String, f64>,
}

impl TfIdf {
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n = 0usize;
        for d in docs {
            n += 1;
            let mut seen: Vec<String> = tokens(d);
            seen.sort();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let idf = df
            .into_iter()
            .map(|(t, c)| (t, ((1.0 + n as f64) / (1.0 + c as f64)).ln() + 1.0))
            .collect();
        TfIdf { idf }
    }

    fn vector(&self, text: &str) -> HashMap<String, f64> {
        let mut v: HashMap<String, f64> = HashMap::new();
        for t in tokens(text) {
            *v.entry(t).or_insert(0.0) += 1.0;
        }
        for (t, x) in v.iter_mut() {
            *x *= self.idf.get(t).copied().unwrap_or(1.0);
        }
        v
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let va = self.vector(a);
        let vb = self.vector(b);
        let dot: f64 = va.iter().map(|(t, x)| x * vb.get(t).copied().unwrap_or(0.0)).sum();
        let na: f64 = va.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

/// Indices of the chosen examples, in prompt order. Each pick is, with
/// probability 1/2, a uniformly random unchosen pair and otherwise the
/// unchosen pair most similar to the query (ties to the lower index).
pub fn select_examples(
    query: &str,
    pool: &[ExamplePair],
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, PromptError> {
    if pool.len() < k {
        return Err(PromptError::PoolTooSmall {
            available: pool.len(),
            requested: k,
        });
    }
    let tfidf = TfIdf::fit(pool.iter().map(|p| p.utterance.as_str()).chain([query]));
    let sims: Vec<f64> = pool.iter().map(|p| tfidf.cosine(query, &p.utterance)).collect();
    let mut rng = seeding::rng(seed);
    let mut unchosen: Vec<usize> = (0..pool.len()).collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let pos = if rng.gen_bool(0.5) {
            rng.gen_range(0..unchosen.len())
        } else {
            let mut best = 0;
            for (p, idx) in unchosen.iter().enumerate() {
                if sims[*idx] > sims[unchosen[best]] {
                    best = p;
                }
            }
            best
        };
        chosen.push(unchosen.remove(pos));
    }
    Ok(chosen)
}

/// Number of shots for one prompt: 4 or 8 with equal probability.
pub fn sample_shot_count(rng: &mut impl Rng) -> usize {
    if rng.gen_bool(0.5) {
        4
    } else {
        8
    }
}

/// Schema linearization, `k` example pairs, then the target utterance with
/// an open SQL slot for the generator to complete.
pub fn build_prompt(
    utterance: &Utterance,
    schema: &Schema,
    pool: &[ExamplePair],
    k: usize,
    seed: u64,
) -> Result<String, PromptError> {
    let picks = select_examples(&utterance.text, pool, k, seed)?;
    let mut out = String::new();
    out.push_str(&schema_to_ddl(schema));
    out.push('\n');
    for i in picks {
        let ex = &pool[i];
        out.push_str(&format!("-- {}\n{};\n\n", ex.utterance.trim(), ex.sql.trim().trim_end_matches(';')));
    }
    out.push_str(&format!("-- {}\nSELECT", utterance.text.trim()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relational::{Column, ColumnType, TableDef};

    fn schema() -> Schema {
        Schema::new(
            "concert",
            "music",
            vec![TableDef::new(
                "singer",
                vec![
                    Column::new("id", ColumnType::Integer).primary(),
                    Column::new("name", ColumnType::Text),
                ],
            )],
            vec![],
        )
        .unwrap()
    }

    fn pair(u: &str) -> ExamplePair {
        ExamplePair {
            utterance: u.into(),
            sql: format!("SELECT '{u}'"),
        }
    }

    fn utt(text: &str) -> Utterance {
        Utterance {
            id: "q".into(),
            text: text.into(),
            schema_id: "concert".into(),
            gold_sql: None,
            difficulty: None,
        }
    }

    #[test]
    fn forced_selection_includes_everything() {
        let pool: Vec<ExamplePair> = ["a b", "c d", "e f", "g h"].into_iter().map(pair).collect();
        let mut picks = select_examples("x", &pool, 4, 3).unwrap();
        picks.sort();
        assert_eq!(picks, vec![0, 1, 2, 3]);
        let p = build_prompt(&utt("x"), &schema(), &pool, 4, 3).unwrap();
        for ex in &pool {
            assert!(p.contains(&ex.sql));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let pool: Vec<ExamplePair> = (0..12).map(|i| pair(&format!("w{i} v{}", i % 3))).collect();
        let a = build_prompt(&utt("w1 v2"), &schema(), &pool, 8, 99).unwrap();
        let b = build_prompt(&utt("w1 v2"), &schema(), &pool, 8, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("CREATE TABLE \"singer\""));
        assert!(a.ends_with("-- w1 v2\nSELECT"));
    }

    #[test]
    fn pool_too_small() {
        let pool = vec![pair("a")];
        assert_eq!(
            select_examples("a", &pool, 4, 0),
            Err(PromptError::PoolTooSmall { available: 1, requested: 4 })
        );
    }
}
