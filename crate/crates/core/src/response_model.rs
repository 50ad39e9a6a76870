//! Annotator behavior model `p(r | s(i))`.
//!
//! An annotator answers correctly with probability `1 - e` and otherwise picks
//! uniformly among all `K + 1` responses (the `K` displayed outputs plus
//! "none of them"). The error rate is `σ(α_annotator + β_domain + b)`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A response to an output-selection question: one of the displayed options
/// (by index into the question's option list) or "none of them is correct".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResponseId {
    Option(usize),
    None,
}

impl ResponseId {
    /// Position in a `K + 1` response vector; NONE is last.
    pub fn slot(self, k: usize) -> usize {
        match self {
            ResponseId::Option(i) => i,
            ResponseId::None => k,
        }
    }

    pub fn from_slot(slot: usize, k: usize) -> Self {
        if slot >= k {
            ResponseId::None
        } else {
            ResponseId::Option(slot)
        }
    }
}

impl fmt::Display for ResponseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResponseId::Option(i) => write!(f, "{i}"),
            ResponseId::None => f.write_str("none"),
        }
    }
}

impl Serialize for ResponseId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ResponseId::Option(i) => s.serialize_u64(*i as u64),
            ResponseId::None => s.serialize_str("none"),
        }
    }
}

impl<'de> Deserialize<'de> for ResponseId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => n
                .as_u64()
                .map(|i| ResponseId::Option(i as usize))
                .ok_or_else(|| serde::de::Error::custom("option index must be a non-negative integer")),
            serde_json::Value::String(s) if s.eq_ignore_ascii_case("none") => Ok(ResponseId::None),
            other => Err(serde::de::Error::custom(format!("invalid response id {other}"))),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("correct response {correct} is not among the {k} options plus NONE")]
    NotAnOption { correct: ResponseId, k: usize },
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Error rate of the fixed model used before any fitting.
pub const DEFAULT_ERROR_RATE: f64 = 0.3;

/// Logistic error-model parameters. Missing annotator or domain ids
/// contribute 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorParams {
    #[serde(default)]
    pub alpha: BTreeMap<String, f64>,
    #[serde(default)]
    pub beta: BTreeMap<String, f64>,
    pub bias: f64,
}

impl Default for AnnotatorParams {
    /// The fixed 0.3-error model.
    fn default() -> Self {
        AnnotatorParams::with_error_rate(DEFAULT_ERROR_RATE)
    }
}

impl AnnotatorParams {
    pub fn with_error_rate(e: f64) -> Self {
        AnnotatorParams {
            alpha: BTreeMap::new(),
            beta: BTreeMap::new(),
            bias: logit(e),
        }
    }

    pub fn logit_of(&self, annotator: &str, domain: &str) -> f64 {
        self.alpha.get(annotator).copied().unwrap_or(0.0)
            + self.beta.get(domain).copied().unwrap_or(0.0)
            + self.bias
    }

    pub fn error_rate(&self, annotator: &str, domain: &str) -> f64 {
        sigmoid(self.logit_of(annotator, domain))
    }
}

/// `σ(α_annotator + β_domain + b)`.
pub fn error_rate(params: &AnnotatorParams, annotator: &str, domain: &str) -> f64 {
    params.error_rate(annotator, domain)
}

/// Where error rates come from: a constant (0 is the perfect annotator) or
/// the fitted logistic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorModel {
    Constant { error_rate: f64 },
    Logistic { params: AnnotatorParams },
}

impl ErrorModel {
    pub fn oracle() -> Self {
        ErrorModel::Constant { error_rate: 0.0 }
    }

    pub fn error_rate(&self, annotator: &str, domain: &str) -> f64 {
        match self {
            ErrorModel::Constant { error_rate } => *error_rate,
            ErrorModel::Logistic { params } => params.error_rate(annotator, domain),
        }
    }
}

impl Default for ErrorModel {
    fn default() -> Self {
        ErrorModel::Logistic {
            params: AnnotatorParams::default(),
        }
    }
}

/// `p(r | correct)` for one response; `k` displayed options.
pub fn likelihood(response: ResponseId, correct: ResponseId, k: usize, e: f64) -> f64 {
    let uniform = e / (k as f64 + 1.0);
    if response.slot(k) == correct.slot(k) {
        (1.0 - e) + uniform
    } else {
        uniform
    }
}

/// Distribution over the `K + 1` responses (NONE last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDistribution {
    pub probs: Vec<f64>,
}

impl ResponseDistribution {
    pub fn prob(&self, r: ResponseId) -> f64 {
        self.probs[r.slot(self.probs.len() - 1)]
    }
}

/// Response distribution when `correct` is the right answer among `k`
/// displayed options (plus NONE).
pub fn response_likelihood(
    correct: ResponseId,
    k: usize,
    e: f64,
) -> Result<ResponseDistribution, ModelError> {
    if let ResponseId::Option(i) = correct {
        if i >= k {
            return Err(ModelError::NotAnOption { correct, k });
        }
    }
    let probs = (0..=k)
        .map(|slot| likelihood(ResponseId::from_slot(slot, k), correct, k, e))
        .collect();
    Ok(ResponseDistribution { probs })
}
