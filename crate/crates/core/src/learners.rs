//! Risk-prediction algorithms whose predictions trigger treatment.
//!
//! A [`Learner`] maps covariates `x` to a probability using features
//! `(x, 1)`. Locked learners never change; retraining learners consume only
//! update-stream observations passed to [`Learner::observe_update`].

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::estimation::{fit, fit_penalized, Penalty};
use crate::linalg::dot;
use crate::models::{logit, sigmoid, Observation};
use crate::{Error, Result};

/// Ridge strength used when an unpenalized fit is not available.
pub const FALLBACK_LAMBDA: f64 = 1.0;
/// Probabilities are clipped to this distance from 0 and 1 before taking
/// logits or log-losses.
pub const PRED_CLIP: f64 = 1e-6;

pub fn clip_prob(p: f64) -> f64 {
    p.clamp(PRED_CLIP, 1.0 - PRED_CLIP)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerPolicy {
    /// Fixed coefficients on `(x, 1)`; no training.
    Fixed { beta: Vec<f64> },
    /// Logistic fit on the pretraining data, then frozen.
    Locked,
    /// Ridge logistic refit on pretraining plus all update data.
    RidgeRetrain { lambda: f64, retrain_every: usize },
    /// Exponentially weighted average of ridge experts fitted on trailing
    /// windows of the training buffer (`0` means the whole buffer). With
    /// `recalibrate`, experts regress on `(logit f̂₀(x), 1)` where `f̂₀` is a
    /// logistic fit to the pretraining data; otherwise on `(x, 1)`.
    Ewaf {
        windows: Vec<usize>,
        eta: f64,
        lambda: f64,
        retrain_every: usize,
        #[serde(default)]
        recalibrate: bool,
    },
    /// Platt recalibration of an inner learner, refit on update data.
    PlattWrapped { inner: Box<LearnerPolicy>, retrain_every: usize },
}

impl LearnerPolicy {
    pub fn default_ewaf() -> Self {
        LearnerPolicy::Ewaf { windows: vec![25, 50, 100, 0], eta: 0.5, lambda: 1.0, retrain_every: 10, recalibrate: false }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::InvalidConfig(s.into()));
        match self {
            LearnerPolicy::Fixed { .. } | LearnerPolicy::Locked => Ok(()),
            LearnerPolicy::RidgeRetrain { lambda, retrain_every } => {
                if *retrain_every == 0 || !(*lambda >= 0.0) {
                    return bad("ridge retraining needs retrain_every ≥ 1 and λ ≥ 0");
                }
                Ok(())
            }
            LearnerPolicy::Ewaf { windows, eta, lambda, retrain_every, .. } => {
                if windows.is_empty() || *retrain_every == 0 || !(*eta > 0.0) || !(*lambda >= 0.0) {
                    return bad("EWAF needs experts, η > 0, λ ≥ 0 and retrain_every ≥ 1");
                }
                Ok(())
            }
            LearnerPolicy::PlattWrapped { inner, retrain_every } => {
                if *retrain_every == 0 {
                    return bad("Platt wrapper needs retrain_every ≥ 1");
                }
                inner.validate()
            }
        }
    }

    /// Whether the learner ever changes after pretraining.
    pub fn is_static(&self) -> bool {
        matches!(self, LearnerPolicy::Fixed { .. } | LearnerPolicy::Locked)
    }
}

/// Training data in row-major form with the intercept column appended.
#[derive(Debug, Clone, Default)]
struct Buffer {
    q: usize,
    zs: Vec<f64>,
    ys: Vec<f64>,
}

impl Buffer {
    fn new(q: usize) -> Self {
        Self { q, zs: Vec::new(), ys: Vec::new() }
    }

    fn push(&mut self, x: &[f64], y: u8) {
        self.zs.extend_from_slice(x);
        self.zs.push(1.0);
        self.ys.push(f64::from(y));
    }

    fn len(&self) -> usize {
        self.ys.len()
    }

    /// The last `w` rows (`w == 0` or `w ≥ len` means all).
    fn tail(&self, w: usize) -> (&[f64], &[f64]) {
        let n = self.len();
        let start = if w == 0 || w >= n { 0 } else { n - w };
        (&self.zs[start * self.q..], &self.ys[start..])
    }
}

fn ridge_fit(q: usize, zs: &[f64], ys: &[f64], lambda: f64, init: &[f64]) -> Result<Vec<f64>> {
    let mut mask = vec![true; q];
    mask[q - 1] = false;
    match fit_penalized(q, zs, ys, Penalty { lambda, mask: &mask }, init) {
        Ok(b) => Ok(b),
        // A single-class window: fall back to penalizing the intercept too.
        Err(Error::Separable) => {
            let all = vec![true; q];
            fit_penalized(q, zs, ys, Penalty { lambda: lambda.max(FALLBACK_LAMBDA), mask: &all }, init)
        }
        Err(e) => Err(e),
    }
}

/// Unpenalized logistic fit, with ridge fallback when the data separate.
fn logistic_fit_with_fallback(buf: &Buffer) -> Result<Vec<f64>> {
    let obs: Vec<Observation> = buf
        .zs
        .chunks_exact(buf.q)
        .zip(&buf.ys)
        .enumerate()
        .map(|(i, (z, &y))| Observation { t: i + 1, z: z.to_vec(), y: y as u8 })
        .collect();
    let init = vec![0.0; buf.q];
    match fit(&obs, &init) {
        Ok(st) if st.converged => Ok(st.theta_hat),
        _ => ridge_fit(buf.q, &buf.zs, &buf.ys, FALLBACK_LAMBDA, &init),
    }
}

#[derive(Debug, Clone)]
enum State {
    Static { beta: Vec<f64> },
    Ridge { beta: Vec<f64>, lambda: f64, every: usize, since: usize },
    Ewaf { experts: Vec<Vec<f64>>, windows: Vec<usize>, weights: Vec<f64>, eta: f64, lambda: f64, every: usize, since: usize },
    Platt { inner: Box<Learner>, a: f64, b: f64, scores: Vec<f64>, ys: Vec<u8>, every: usize, since: usize },
}

/// A trained learner plus its training buffer.
#[derive(Debug, Clone)]
pub struct Learner {
    state: State,
    /// Base model on `(x, 1)` whose logit replaces `x` as the feature.
    base: Option<Vec<f64>>,
    buffer: Buffer,
    /// Absolute times of every update observation consumed.
    update_times: Vec<usize>,
    retrains: usize,
}

impl Learner {
    /// Trains the policy on `pretrain` (pairs of covariates and outcome).
    pub fn new(policy: &LearnerPolicy, p: usize, pretrain: &[(Vec<f64>, u8)]) -> Result<Self> {
        policy.validate()?;
        let mut buffer = Buffer::new(p + 1);
        for (x, y) in pretrain {
            if x.len() != p {
                return Err(Error::DimensionMismatch { expected: p, got: x.len() });
            }
            buffer.push(x, *y);
        }
        let base = match policy {
            LearnerPolicy::Ewaf { recalibrate: true, .. } => {
                let beta = logistic_fit_with_fallback(&buffer)?;
                let mut recal = Buffer::new(2);
                for (x, y) in pretrain {
                    recal.push(&[base_logit(&beta, x)], *y);
                }
                buffer = recal;
                Some(beta)
            }
            _ => None,
        };
        let q = buffer.q;
        let needs_data = !matches!(policy, LearnerPolicy::Fixed { .. });
        if needs_data && buffer.len() == 0 {
            return Err(Error::TooFewObservations { needed: 1, got: 0 });
        }
        let state = match policy {
            LearnerPolicy::Fixed { beta } => {
                if beta.len() != q {
                    return Err(Error::DimensionMismatch { expected: q, got: beta.len() });
                }
                State::Static { beta: beta.clone() }
            }
            LearnerPolicy::Locked => State::Static { beta: logistic_fit_with_fallback(&buffer)? },
            LearnerPolicy::RidgeRetrain { lambda, retrain_every } => {
                let beta = ridge_fit(q, &buffer.zs, &buffer.ys, *lambda, &vec![0.0; q])?;
                State::Ridge { beta, lambda: *lambda, every: *retrain_every, since: 0 }
            }
            LearnerPolicy::Ewaf { windows, eta, lambda, retrain_every, .. } => {
                let init = vec![0.0; q];
                let experts = windows
                    .iter()
                    .map(|&w| {
                        let (zs, ys) = buffer.tail(w);
                        ridge_fit(q, zs, ys, *lambda, &init)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let k = windows.len();
                State::Ewaf {
                    experts,
                    windows: windows.clone(),
                    weights: vec![1.0 / k as f64; k],
                    eta: *eta,
                    lambda: *lambda,
                    every: *retrain_every,
                    since: 0,
                }
            }
            LearnerPolicy::PlattWrapped { inner, retrain_every } => {
                let inner = Learner::new(inner, p, pretrain)?;
                State::Platt { inner: Box::new(inner), a: 1.0, b: 0.0, scores: Vec::new(), ys: Vec::new(), every: *retrain_every, since: 0 }
            }
        };
        Ok(Self { state, base, buffer, update_times: Vec::new(), retrains: 0 })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.base {
            Some(b) => self.predict_features(&[base_logit(b, x)]),
            None => self.predict_features(x),
        }
    }

    fn predict_features(&self, x: &[f64]) -> f64 {
        match &self.state {
            State::Static { beta } | State::Ridge { beta, .. } => sigmoid(dot(&beta[..x.len()], x) + beta[x.len()]),
            State::Ewaf { experts, weights, .. } => experts
                .iter()
                .zip(weights)
                .map(|(b, w)| w * sigmoid(dot(&b[..x.len()], x) + b[x.len()]))
                .sum(),
            State::Platt { inner, a, b, .. } => platt_apply(*a, *b, inner.predict(x)),
        }
    }

    /// Feeds one update-stream observation observed at absolute time `t`.
    pub fn observe_update(&mut self, t: usize, x: &[f64], y: u8) -> Result<()> {
        let transformed;
        let x = match &self.base {
            Some(b) => {
                transformed = [base_logit(b, x)];
                &transformed[..]
            }
            None => x,
        };
        self.update_times.push(t);
        let pred_inner = match &self.state {
            State::Platt { inner, .. } => Some(inner.predict(x)),
            _ => None,
        };
        let mut retrained = false;
        match &mut self.state {
            State::Static { .. } => {}
            State::Ridge { beta, lambda, every, since } => {
                self.buffer.push(x, y);
                *since += 1;
                if *since >= *every {
                    *since = 0;
                    *beta = ridge_fit(self.buffer.q, &self.buffer.zs, &self.buffer.ys, *lambda, beta)?;
                    retrained = true;
                }
            }
            State::Ewaf { experts, windows, weights, eta, lambda, every, since } => {
                let yf = f64::from(y);
                for (w, b) in weights.iter_mut().zip(experts.iter()) {
                    let p = clip_prob(sigmoid(dot(&b[..x.len()], x) + b[x.len()]));
                    let loss = -(yf * libm::log(p) + (1.0 - yf) * libm::log(1.0 - p));
                    *w *= libm::exp(-*eta * loss);
                }
                let total: f64 = weights.iter().sum();
                if total > 0.0 && total.is_finite() {
                    weights.iter_mut().for_each(|w| *w /= total);
                } else {
                    let k = weights.len() as f64;
                    weights.iter_mut().for_each(|w| *w = 1.0 / k);
                }
                self.buffer.push(x, y);
                *since += 1;
                if *since >= *every {
                    *since = 0;
                    for (b, &w) in experts.iter_mut().zip(windows.iter()) {
                        let (zs, ys) = self.buffer.tail(w);
                        *b = ridge_fit(self.buffer.q, zs, ys, *lambda, b)?;
                    }
                    retrained = true;
                }
            }
            State::Platt { inner, a, b, scores, ys, every, since } => {
                scores.push(pred_inner.unwrap_or(0.5));
                ys.push(y);
                inner.observe_update(t, x, y)?;
                self.update_times.pop();
                *since += 1;
                if *since >= *every {
                    *since = 0;
                    if let Ok((na, nb)) = platt_fit(scores, ys) {
                        *a = na;
                        *b = nb;
                        retrained = true;
                    }
                }
            }
        }
        if retrained {
            self.retrains += 1;
        }
        Ok(())
    }

    /// Absolute times of the update observations this learner has seen.
    pub fn update_times(&self) -> &[usize] {
        match &self.state {
            State::Platt { inner, .. } => inner.update_times(),
            _ => &self.update_times,
        }
    }

    pub fn retrains(&self) -> usize {
        self.retrains
    }

    /// Current EWAF weights, if this is an EWAF learner.
    pub fn ewaf_weights(&self) -> Option<&[f64]> {
        match &self.state {
            State::Ewaf { weights, .. } => Some(weights),
            _ => None,
        }
    }
}

fn base_logit(beta: &[f64], x: &[f64]) -> f64 {
    logit(clip_prob(sigmoid(dot(&beta[..x.len()], x) + beta[x.len()])))
}

/// Logistic regression of `outcomes` on `logit(scores)`: returns slope and
/// intercept.
pub fn platt_fit(scores: &[f64], outcomes: &[u8]) -> Result<(f64, f64)> {
    if scores.len() != outcomes.len() {
        return Err(Error::DimensionMismatch { expected: scores.len(), got: outcomes.len() });
    }
    if scores.is_empty() {
        return Err(Error::TooFewObservations { needed: 2, got: 0 });
    }
    let ones = outcomes.iter().filter(|&&y| y == 1).count();
    if ones == 0 || ones == outcomes.len() {
        return Err(Error::SingleClass);
    }
    let ls: Vec<f64> = scores.iter().map(|&s| logit(clip_prob(s))).collect();
    let first = ls[0];
    if ls.iter().all(|&l| l == first) {
        return Err(Error::DegenerateProbability(scores[0]));
    }
    let mut zs = Vec::with_capacity(2 * ls.len());
    for l in &ls {
        zs.extend_from_slice(&[*l, 1.0]);
    }
    let ys: Vec<f64> = outcomes.iter().map(|&y| f64::from(y)).collect();
    let buf = Buffer { q: 2, zs, ys };
    let beta = logistic_fit_with_fallback(&buf)?;
    Ok((beta[0], beta[1]))
}

pub fn platt_apply(a: f64, b: f64, s: f64) -> f64 {
    sigmoid(a * logit(clip_prob(s)) + b)
}

/// `1{p > cutoff}`.
pub fn threshold_classify(p: f64, cutoff: f64) -> u8 {
    u8::from(p > cutoff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{bernoulli, substream, uniform_pm1};
    use rand::Rng;

    fn draw(seed: u64, n: usize, beta: &[f64]) -> Vec<(Vec<f64>, u8)> {
        let mut r = substream(seed, 0, 0);
        let p = beta.len() - 1;
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..p).map(|_| uniform_pm1(&mut r)).collect();
                let pr = sigmoid(dot(&beta[..p], &x) + beta[p]);
                let y = u8::from(bernoulli(&mut r, pr));
                (x, y)
            })
            .collect()
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(threshold_classify(0.71, 0.7), 1);
        assert_eq!(threshold_classify(0.7, 0.7), 0);
        assert_eq!(threshold_classify(0.0, 0.7), 0);
    }

    #[test]
    fn locked_recovers_generating_model() {
        let beta = [1.0, 1.0, 1.0, 2.0];
        let data = draw(1, 20_000, &beta);
        let l = Learner::new(&LearnerPolicy::Locked, 3, &data).unwrap();
        let mut r = substream(2, 0, 0);
        let mut se = 0.0;
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| uniform_pm1(&mut r)).collect();
            let truth = sigmoid(dot(&beta[..3], &x) + beta[3]);
            se += (l.predict(&x) - truth).powi(2);
        }
        assert!(libm::sqrt(se / 1000.0) < 0.03);
        let again = Learner::new(&LearnerPolicy::Locked, 3, &data).unwrap();
        assert_eq!(l.predict(&[0.1, 0.2, 0.3]), again.predict(&[0.1, 0.2, 0.3]));
    }

    #[test]
    fn locked_is_frozen_and_fixed_is_exact() {
        let data = draw(3, 200, &[1.0, 0.5]);
        let mut l = Learner::new(&LearnerPolicy::Locked, 1, &data).unwrap();
        let before = l.predict(&[0.3]);
        for t in 0..50 {
            l.observe_update(t, &[0.9], 1).unwrap();
        }
        assert_eq!(before.to_bits(), l.predict(&[0.3]).to_bits());
        let f = Learner::new(&LearnerPolicy::Fixed { beta: vec![0.0, 0.0] }, 1, &[]).unwrap();
        assert_eq!(f.predict(&[0.0]), 0.5);
    }

    #[test]
    fn separable_pretraining_falls_back_to_ridge() {
        let data: Vec<(Vec<f64>, u8)> = (0..40).map(|i| (vec![i as f64 / 20.0 - 1.0], u8::from(i >= 20))).collect();
        let l = Learner::new(&LearnerPolicy::Locked, 1, &data).unwrap();
        assert!(l.predict(&[0.9]) > 0.5 && l.predict(&[-0.9]) < 0.5);
    }

    #[test]
    fn ridge_retrain_consumes_updates() {
        let pre = draw(4, 200, &[1.0, 0.0]);
        let pol = LearnerPolicy::RidgeRetrain { lambda: 1.0, retrain_every: 10 };
        let mut l = Learner::new(&pol, 1, &pre).unwrap();
        let p0 = l.predict(&[0.5]);
        for t in 0..100 {
            l.observe_update(1000 + t, &[0.5], 0).unwrap();
        }
        assert_eq!(l.retrains(), 10);
        assert!(l.predict(&[0.5]) < p0);
        assert_eq!(l.update_times().len(), 100);
    }

    #[test]
    fn huge_ridge_gives_base_rate() {
        let pre = draw(5, 500, &[2.0, 0.3]);
        let pol = LearnerPolicy::RidgeRetrain { lambda: 1e9, retrain_every: 1 };
        let l = Learner::new(&pol, 1, &pre).unwrap();
        let rate = pre.iter().filter(|(_, y)| *y == 1).count() as f64 / pre.len() as f64;
        assert!((l.predict(&[0.7]) - rate).abs() < 1e-4);
    }

    #[test]
    fn ewaf_identical_experts_and_weights() {
        let pre = draw(6, 200, &[1.0, 0.0]);
        let pol = LearnerPolicy::Ewaf { windows: vec![0, 0, 0], eta: 0.5, lambda: 1.0, retrain_every: 5, recalibrate: false };
        let mut l = Learner::new(&pol, 1, &pre).unwrap();
        let single = Learner::new(&LearnerPolicy::RidgeRetrain { lambda: 1.0, retrain_every: 5 }, 1, &pre).unwrap();
        assert!((l.predict(&[0.2]) - single.predict(&[0.2])).abs() < 1e-12);
        let mut r = substream(7, 0, 0);
        for t in 0..37 {
            let x = uniform_pm1(&mut r);
            l.observe_update(t, &[x], u8::from(r.gen::<bool>())).unwrap();
            let w = l.ewaf_weights().unwrap();
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn ewaf_multiplicative_rule() {
        // Expert 0 predicts y perfectly (loss ≈ 0), expert 1 has log-loss 1.
        let mut l = Learner::new(&LearnerPolicy::default_ewaf(), 1, &draw(8, 200, &[1.0, 0.0])).unwrap();
        if let State::Ewaf { experts, weights, eta, every, .. } = &mut l.state {
            *experts = vec![vec![0.0, 50.0], vec![0.0, logit(libm::exp(-1.0))]];
            *weights = vec![0.5, 0.5];
            *eta = core::f64::consts::LN_2;
            *every = 1000;
        }
        l.observe_update(0, &[0.0], 1).unwrap();
        let w = l.ewaf_weights().unwrap();
        assert!((w[0] / w[1] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn ewaf_adapts_after_shift() {
        let pre = draw(9, 200, &[2.0, 0.0]);
        let mut ewaf = Learner::new(&LearnerPolicy::default_ewaf(), 1, &pre).unwrap();
        let locked = Learner::new(&LearnerPolicy::Locked, 1, &pre).unwrap();
        let post = draw(10, 300, &[-1.0, 0.0]);
        for (t, (x, y)) in post.iter().enumerate() {
            ewaf.observe_update(t, x, *y).unwrap();
        }
        let test = draw(11, 2000, &[-1.0, 0.0]);
        let err = |l: &Learner| test.iter().map(|(x, _)| (l.predict(x) - sigmoid(-x[0])).abs()).sum::<f64>();
        assert!(err(&ewaf) < err(&locked));
    }

    #[test]
    fn platt_self_calibration() {
        let mut r = substream(12, 0, 0);
        let n = 10_000;
        let mut s = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let p = 0.05 + 0.9 * r.gen::<f64>();
            s.push(p);
            y.push(u8::from(bernoulli(&mut r, p)));
        }
        let (a, b) = platt_fit(&s, &y).unwrap();
        assert!((a - 1.0).abs() < 0.1 && b.abs() < 0.1, "{a} {b}");
        assert!(platt_apply(a, b, 0.3) < platt_apply(a, b, 0.6));
        assert!(platt_fit(&[0.4; 5], &[0, 1, 0, 1, 0]).is_err());
        assert!(matches!(platt_fit(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
    }

    #[test]
    fn platt_wrapper_recalibrates() {
        let pre = draw(13, 300, &[1.0, 0.0]);
        let pol = LearnerPolicy::PlattWrapped { inner: Box::new(LearnerPolicy::Locked), retrain_every: 50 };
        let mut l = Learner::new(&pol, 1, &pre).unwrap();
        let post = draw(14, 500, &[1.0, -1.5]);
        for (t, (x, y)) in post.iter().enumerate() {
            l.observe_update(t, x, *y).unwrap();
        }
        assert!((l.predict(&[0.0]) - sigmoid(-1.5)).abs() < 0.08);
        assert_eq!(l.update_times().len(), 500);
    }
}
