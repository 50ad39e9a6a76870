//! Fitting the logistic annotator error model by expectation maximization.
//!
//! Each utterance has a latent correct cluster `s` with prior `p₀(s)`. An
//! observation is an annotator's response to a question, together with the
//! response every cluster would make correct. The incomplete-data
//! log-likelihood is
//!
//! ```text
//! L(θ) = Σ_u log Σ_s p₀(s) Π_t p(r_t | s; e_t(θ)),   e_t = σ(α_a + β_d + b)
//! ```
//!
//! The E-step computes `q_u(s) ∝ p₀(s) Π_t p(r_t | s)`. Given `q`, each
//! observation only contributes through `m_t = Σ_s q_u(s) [r_t is correct for
//! s]`, so the M-step maximizes
//!
//! ```text
//! Q(θ) = Σ_t m_t log(1 − e_t K_t/(K_t+1)) + (1 − m_t) log(e_t/(K_t+1)) − λ/2 (|α|² + |β|²)
//! ```
//!
//! by gradient ascent with backtracking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response_model::{likelihood, sigmoid, AnnotatorParams, ResponseId};

/// One annotator response, with the response each cluster makes correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub annotator: String,
    pub assignment: Vec<ResponseId>,
    /// Options displayed (NONE excluded).
    pub k: usize,
    pub response: ResponseId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceData {
    pub utterance_id: String,
    pub domain: String,
    pub prior: Vec<f64>,
    pub observations: Vec<Observation>,
    /// Cluster equivalent to the reference program, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDataset {
    pub utterances: Vec<UtteranceData>,
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("dataset has no observations")]
    Empty,
    #[error("utterance `{utterance}`: {reason}")]
    Invalid { utterance: String, reason: String },
    #[error("log-likelihood decreased at iteration {iteration}: {before} -> {after}")]
    Decreased { iteration: usize, before: f64, after: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no response has a known correct answer")]
    NoGold,
}

impl FitDataset {
    pub fn observation_count(&self) -> usize {
        self.utterances.iter().map(|u| u.observations.len()).sum()
    }

    pub fn validate(&self) -> Result<(), FitError> {
        for u in &self.utterances {
            let bad = |reason: String| FitError::Invalid {
                utterance: u.utterance_id.clone(),
                reason,
            };
            for o in &u.observations {
                if o.assignment.len() != u.prior.len() {
                    return Err(bad(format!(
                        "assignment covers {} clusters, prior has {}",
                        o.assignment.len(),
                        u.prior.len()
                    )));
                }
                let fits = |r: &ResponseId| matches!(r, ResponseId::None) || matches!(r, ResponseId::Option(i) if *i < o.k);
                if !fits(&o.response) || !o.assignment.iter().all(fits) {
                    return Err(bad(format!("response outside the {} options", o.k)));
                }
            }
            if let Some(g) = u.gold {
                if g >= u.prior.len() {
                    return Err(bad(format!("gold cluster {g} out of range")));
                }
            }
        }
        Ok(())
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_joint(u: &UtteranceData, params: &AnnotatorParams) -> Vec<f64> {
    let rates: Vec<f64> = u
        .observations
        .iter()
        .map(|o| params.error_rate(&o.annotator, &u.domain))
        .collect();
    u.prior
        .iter()
        .enumerate()
        .map(|(s, p)| {
            let mut l = p.ln();
            for (o, e) in u.observations.iter().zip(&rates) {
                l += likelihood(o.response, o.assignment[s], o.k, *e).ln();
            }
            l
        })
        .collect()
}

/// `log Σ_s p₀(s) Π_t p(r_t | s)` summed over utterances.
pub fn incomplete_log_likelihood(ds: &FitDataset, params: &AnnotatorParams) -> f64 {
    ds.utterances
        .iter()
        .map(|u| log_sum_exp(&log_joint(u, params)))
        .sum()
}

/// Posterior over one utterance's clusters given all its observations.
pub fn utterance_posterior(u: &UtteranceData, params: &AnnotatorParams) -> Vec<f64> {
    let lj = log_joint(u, params);
    let z = log_sum_exp(&lj);
    if !z.is_finite() {
        return u.prior.clone();
    }
    lj.into_iter().map(|l| (l - z).exp()).collect()
}

/// Parameter vector layout `[α…, β…, b]`, names sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub annotators: Vec<String>,
    pub domains: Vec<String>,
}

impl Layout {
    pub fn of(ds: &FitDataset) -> Self {
        let mut annotators: Vec<String> = ds
            .utterances
            .iter()
            .flat_map(|u| u.observations.iter().map(|o| o.annotator.clone()))
            .collect();
        annotators.sort();
        annotators.dedup();
        let mut domains: Vec<String> = ds
            .utterances
            .iter()
            .filter(|u| !u.observations.is_empty())
            .map(|u| u.domain.clone())
            .collect();
        domains.sort();
        domains.dedup();
        Layout { annotators, domains }
    }

    pub fn len(&self) -> usize {
        self.annotators.len() + self.domains.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pack(&self, p: &AnnotatorParams) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .annotators
            .iter()
            .map(|a| p.alpha.get(a).copied().unwrap_or(0.0))
            .collect();
        v.extend(self.domains.iter().map(|d| p.beta.get(d).copied().unwrap_or(0.0)));
        v.push(p.bias);
        v
    }

    /// Overwrites the fitted entries of `base`, keeping any others.
    pub fn unpack(&self, theta: &[f64], base: &AnnotatorParams) -> AnnotatorParams {
        let mut p = base.clone();
        let na = self.annotators.len();
        for (i, a) in self.annotators.iter().enumerate() {
            p.alpha.insert(a.clone(), theta[i]);
        }
        for (j, d) in self.domains.iter().enumerate() {
            p.beta.insert(d.clone(), theta[na + j]);
        }
        p.bias = theta[self.len() - 1];
        p
    }
}

/// Per-observation sufficient statistics of the M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedStats {
    pub layout: Layout,
    /// `(annotator index, domain index, K, m)`.
    pub rows: Vec<(usize, usize, usize, f64)>,
    pub l2: f64,
}

/// E-step: posterior probability that each response was correct.
pub fn e_step(ds: &FitDataset, params: &AnnotatorParams, layout: &Layout, l2: f64) -> ExpectedStats {
    let mut rows = Vec::with_capacity(ds.observation_count());
    for u in &ds.utterances {
        if u.observations.is_empty() {
            continue;
        }
        let q = utterance_posterior(u, params);
        let di = layout.domains.binary_search(&u.domain).expect("layout covers domains");
        for o in &u.observations {
            let ai = layout.annotators.binary_search(&o.annotator).expect("layout covers annotators");
            let m: f64 = q
                .iter()
                .zip(&o.assignment)
                .filter(|(_, c)| **c == o.response)
                .map(|(w, _)| w)
                .sum();
            rows.push((ai, di, o.k, m.clamp(0.0, 1.0)));
        }
    }
    ExpectedStats {
        layout: layout.clone(),
        rows,
        l2,
    }
}

fn logit_at(layout: &Layout, theta: &[f64], ai: usize, di: usize) -> f64 {
    theta[ai] + theta[layout.annotators.len() + di] + theta[layout.len() - 1]
}

/// `log(1 − e K/(K+1))` and `log(e/(K+1))` computed from the logit for
/// stability.
fn log_terms(z: f64, k: usize) -> (f64, f64) {
    let kf = k as f64;
    // log e = -log(1 + exp(-z)), log(1 - e) = -log(1 + exp(z))
    let log_e = -(-z).exp().ln_1p();
    let log_1me = -z.exp().ln_1p();
    // 1 − eK/(K+1) = (1 − e) + e/(K+1)
    let a = log_1me;
    let b = log_e - (kf + 1.0).ln();
    let log_correct = if a > b { a + (b - a).exp().ln_1p() } else { b + (a - b).exp().ln_1p() };
    (log_correct, b)
}

impl ExpectedStats {
    fn penalty(&self, theta: &[f64]) -> f64 {
        let n = self.layout.len() - 1;
        0.5 * self.l2 * theta[..n].iter().map(|x| x * x).sum::<f64>()
    }

    /// Expected complete-data log-likelihood of the responses, penalized.
    pub fn objective(&self, theta: &[f64]) -> f64 {
        let mut total = 0.0;
        for &(ai, di, k, m) in &self.rows {
            let z = logit_at(&self.layout, theta, ai, di);
            let (lc, lw) = log_terms(z, k);
            total += m * lc + (1.0 - m) * lw;
        }
        total - self.penalty(theta)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        let na = self.layout.annotators.len();
        let bias = self.layout.len() - 1;
        for &(ai, di, k, m) in &self.rows {
            let z = logit_at(&self.layout, theta, ai, di);
            let e = sigmoid(z);
            let kf = k as f64;
            let c = kf / (kf + 1.0);
            // d/dz [m log(1 − c e) + (1 − m) log e] with de/dz = e(1 − e)
            let d = -m * c * e * (1.0 - e) / (1.0 - c * e) + (1.0 - m) * (1.0 - e);
            g[ai] += d;
            g[na + di] += d;
            g[bias] += d;
        }
        for (i, x) in theta[..bias].iter().enumerate() {
            g[i] -= self.l2 * x;
        }
        g
    }

    /// Gradient ascent with backtracking from `theta`; never decreases the
    /// objective.
    pub fn maximize(&self, theta: &[f64], max_steps: usize, tol: f64) -> Vec<f64> {
        let mut x = theta.to_vec();
        let mut fx = self.objective(&x);
        let mut step = 1.0;
        for _ in 0..max_steps {
            let g = self.gradient(&x);
            let gg: f64 = g.iter().map(|v| v * v).sum();
            if gg.sqrt() < tol {
                break;
            }
            let mut accepted = false;
            while step > 1e-12 {
                let cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + step * b).collect();
                let fc = self.objective(&cand);
                if fc >= fx + 1e-4 * step * gg {
                    x = cand;
                    fx = fc;
                    accepted = true;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub l2: f64,
    /// Compute the latent posteriors once, from the initial parameters, and
    /// run a single M-step.
    pub single_e_step: bool,
    pub m_step_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 200,
            tol: 1e-6,
            l2: 1e-3,
            single_e_step: false,
            m_step_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: AnnotatorParams,
    /// Penalized incomplete-data log-likelihood, starting at the initial
    /// parameters.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    /// Present when some responses have a known correct answer.
    pub auc: Option<f64>,
    pub mse: Option<f64>,
}

fn penalized(ds: &FitDataset, layout: &Layout, theta: &[f64], params: &AnnotatorParams, l2: f64) -> f64 {
    let n = layout.len() - 1;
    incomplete_log_likelihood(ds, params) - 0.5 * l2 * theta[..n].iter().map(|x| x * x).sum::<f64>()
}

/// Fits α, β and b by EM from `init`.
pub fn fit(ds: &FitDataset, init: &AnnotatorParams, opts: &FitOptions) -> Result<FitReport, FitError> {
    ds.validate()?;
    if ds.observation_count() == 0 {
        return Err(FitError::Empty);
    }
    let layout = Layout::of(ds);
    let mut theta = layout.pack(init);
    let mut params = layout.unpack(&theta, init);
    let mut ll = penalized(ds, &layout, &theta, &params, opts.l2);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let frozen = opts.single_e_step.then(|| e_step(ds, &params, &layout, opts.l2));
    for it in 0..opts.max_iters {
        let stats = match &frozen {
            Some(s) => s.clone(),
            None => e_step(ds, &params, &layout, opts.l2),
        };
        let next = stats.maximize(&theta, opts.m_step_iters, opts.tol * 1e-2);
        let next_params = layout.unpack(&next, init);
        let next_ll = penalized(ds, &layout, &next, &next_params, opts.l2);
        iterations = it + 1;
        if frozen.is_none() && next_ll < ll - 1e-9 {
            return Err(FitError::Decreased {
                iteration: it + 1,
                before: ll,
                after: next_ll,
            });
        }
        let gain = next_ll - ll;
        theta = next;
        params = next_params;
        ll = next_ll;
        trace.push(ll);
        if frozen.is_some() || gain < opts.tol {
            break;
        }
    }
    let (auc, mse) = match evaluate(ds, &params) {
        Ok(ev) => (Some(ev.auc), Some(ev.mse)),
        Err(EvalError::NoGold) => (None, None),
    };
    Ok(FitReport {
        params,
        log_likelihood_trace: trace,
        iterations,
        auc,
        mse,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub responses: usize,
    pub observed_accuracy: f64,
    pub predicted_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub auc: f64,
    pub mse: f64,
    pub responses: usize,
    pub accuracy_by_annotator: BTreeMap<String, GroupAccuracy>,
    pub accuracy_by_domain: BTreeMap<String, GroupAccuracy>,
}

/// Area under the ROC curve of `scores` against binary `labels` via the
/// rank statistic with midranks for ties. 0.5 when one class is absent.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for t in &idx[i..=j] {
            ranks[*t] = mid;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|l| **l).count() as f64;
    let neg = n as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return 0.5;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

/// Predicted probability of a correct response, `(1 − e) + e/(K+1)`,
/// against whether each response matched the gold cluster's option.
pub fn evaluate(ds: &FitDataset, params: &AnnotatorParams) -> Result<Evaluation, EvalError> {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    let mut by_a: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    let mut by_d: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    for u in &ds.utterances {
        let Some(g) = u.gold else { continue };
        for o in &u.observations {
            let e = params.error_rate(&o.annotator, &u.domain);
            let p = (1.0 - e) + e / (o.k as f64 + 1.0);
            let y = o.response == o.assignment[g];
            preds.push(p);
            labels.push(y);
            for (map, key) in [(&mut by_a, &o.annotator), (&mut by_d, &u.domain)] {
                let en = map.entry(key.clone()).or_insert((0, 0.0, 0.0));
                en.0 += 1;
                en.1 += y as u8 as f64;
                en.2 += p;
            }
        }
    }
    if preds.is_empty() {
        return Err(EvalError::NoGold);
    }
    let mse = preds
        .iter()
        .zip(&labels)
        .map(|(p, y)| (p - (*y as u8 as f64)).powi(2))
        .sum::<f64>()
        / preds.len() as f64;
    let summarize = |m: BTreeMap<String, (usize, f64, f64)>| {
        m.into_iter()
            .map(|(k, (n, c, p))| {
                (
                    k,
                    GroupAccuracy {
                        responses: n,
                        observed_accuracy: c / n as f64,
                        predicted_accuracy: p / n as f64,
                    },
                )
            })
            .collect()
    };
    Ok(Evaluation {
        auc: auc(&preds, &labels),
        mse,
        responses: preds.len(),
        accuracy_by_annotator: summarize(by_a),
        accuracy_by_domain: summarize(by_d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(annotator: &str, assignment: Vec<ResponseId>, k: usize, response: ResponseId) -> Observation {
        Observation {
            annotator: annotator.into(),
            assignment,
            k,
            response,
        }
    }

    fn two_cluster() -> FitDataset {
        FitDataset {
            utterances: vec![UtteranceData {
                utterance_id: "u".into(),
                domain: "d".into(),
                prior: vec![0.6, 0.4],
                observations: vec![obs(
                    "a",
                    vec![ResponseId::Option(0), ResponseId::Option(1)],
                    2,
                    ResponseId::Option(0),
                )],
                gold: Some(0),
                difficulty: None,
            }],
        }
    }

    #[test]
    fn hand_computed_likelihood() {
        let ll = incomplete_log_likelihood(&two_cluster(), &AnnotatorParams::with_error_rate(0.3));
        assert!((ll - (0.6f64 * 0.8 + 0.4 * 0.1).ln()).abs() < 1e-12);
        assert_eq!(incomplete_log_likelihood(&FitDataset::default(), &AnnotatorParams::default()), 0.0);
    }

    #[test]
    fn near_oracle_likelihood_is_log_prior() {
        let ll = incomplete_log_likelihood(&two_cluster(), &AnnotatorParams::with_error_rate(1e-12));
        assert!((ll - 0.6f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), 1.0);
        assert_eq!(auc(&[0.5; 4], &[false, true, false, true]), 0.5);
        // One positive ranked below one of two negatives: 1 of 2 pairs.
        assert_eq!(auc(&[0.3, 0.2, 0.4], &[false, true, false]), 0.0);
        assert_eq!(auc(&[0.3, 0.35, 0.4], &[false, true, false]), 0.5);
    }

    #[test]
    fn fit_rejects_empty() {
        let ds = FitDataset::default();
        assert_eq!(fit(&ds, &AnnotatorParams::default(), &FitOptions::default()), Err(FitError::Empty));
    }
}
