//! Browser bindings for the question-scoring math: expected information
//! gain of a question, the posterior after a response, and the logistic
//! annotator error rate.
//!
//! Responses are encoded as integers: `0..k` select a displayed output and
//! `-1` is "none of them".

use oselect_core::infogain::{entropy, information_gain, posterior, response_marginal, MAX_OPTIONS};
use oselect_core::response_model::{logit, sigmoid, ResponseId};
use thiserror::Error;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DemoError {
    #[error("{weights} weights but {assignment} assigned responses")]
    LengthMismatch { weights: usize, assignment: usize },
    #[error("weights must be finite, non-negative and not all zero")]
    BadWeights,
    #[error("the number of options must be between 1 and {MAX_OPTIONS}, got {0}")]
    BadOptionCount(usize),
    #[error("response {value} is neither an option below {k} nor -1")]
    BadResponse { value: i32, k: usize },
    #[error("error rate must lie in [0, 1], got {0}")]
    BadErrorRate(f64),
    #[error("the response is impossible under every hypothesis")]
    ZeroMass,
}

fn response(value: i32, k: usize) -> Result<ResponseId, DemoError> {
    match value {
        -1 => Ok(ResponseId::None),
        v if v >= 0 && (v as usize) < k => Ok(ResponseId::Option(v as usize)),
        _ => Err(DemoError::BadResponse { value, k }),
    }
}

/// Normalized weights and decoded responses after validation.
fn inputs(weights: &[f64], assignment: &[i32], k: usize, e: f64) -> Result<(Vec<f64>, Vec<ResponseId>), DemoError> {
    if weights.len() != assignment.len() {
        return Err(DemoError::LengthMismatch {
            weights: weights.len(),
            assignment: assignment.len(),
        });
    }
    if k == 0 || k > MAX_OPTIONS {
        return Err(DemoError::BadOptionCount(k));
    }
    if !(0.0..=1.0).contains(&e) {
        return Err(DemoError::BadErrorRate(e));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || total <= 0.0 || !total.is_finite() {
        return Err(DemoError::BadWeights);
    }
    let correct = assignment.iter().map(|a| response(*a, k)).collect::<Result<_, _>>()?;
    Ok((weights.iter().map(|w| w / total).collect(), correct))
}

/// Scores of one question under the current belief.
#[wasm_bindgen(getter_with_clone)]
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionStats {
    /// Expected entropy reduction in bits.
    pub ig_bits: f64,
    pub entropy_bits: f64,
    /// Predicted probability of each option, then of "none".
    pub marginal: Vec<f64>,
}

pub fn score(weights: &[f64], assignment: &[i32], k: usize, e: f64) -> Result<QuestionStats, DemoError> {
    let (w, c) = inputs(weights, assignment, k, e)?;
    Ok(QuestionStats {
        ig_bits: information_gain(&w, &c, k, e),
        entropy_bits: entropy(&w),
        marginal: response_marginal(&w, &c, k, e),
    })
}

pub fn update(weights: &[f64], assignment: &[i32], k: usize, e: f64, answer: i32) -> Result<Vec<f64>, DemoError> {
    let (w, c) = inputs(weights, assignment, k, e)?;
    posterior(&w, &c, k, e, response(answer, k)?).ok_or(DemoError::ZeroMass)
}

/// `σ(α + β + b)`.
pub fn error_rate(alpha: f64, beta: f64, bias: f64) -> f64 {
    sigmoid(alpha + beta + bias)
}

fn js(e: DemoError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = scoreQuestion)]
pub fn score_question(weights: &[f64], assignment: &[i32], k: usize, error_rate: f64) -> Result<QuestionStats, JsError> {
    score(weights, assignment, k, error_rate).map_err(js)
}

#[wasm_bindgen(js_name = updateBelief)]
pub fn update_belief(weights: &[f64], assignment: &[i32], k: usize, error_rate: f64, answer: i32) -> Result<Vec<f64>, JsError> {
    update(weights, assignment, k, error_rate, answer).map_err(js)
}

#[wasm_bindgen(js_name = annotatorErrorRate)]
pub fn annotator_error_rate(alpha: f64, beta: f64, bias: f64) -> f64 {
    error_rate(alpha, beta, bias)
}

#[wasm_bindgen(js_name = biasFor)]
pub fn bias_for(rate: f64) -> f64 {
    logit(rate)
}
