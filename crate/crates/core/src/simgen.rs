//! Data generation for confounding-medical-intervention scenarios.
//!
//! Each patient gets covariates `x ~ U(−1,1)^{p′}`, a measured covariate
//! `x̃`, an unmeasured confounder `u`, a prediction from the active learner,
//! a treatment drawn from the active treatment model, and an untreated
//! potential outcome `Y(0)`. Only untreated (standard-of-care) patients
//! reveal their outcome; those are split between monitoring and model
//! updating.
//!
//! Coefficient layouts: outcome `θ, δ` act on `(x₁..x_{p′}, x̃, u, 1)`;
//! treatment `γ` acts on `(logit f̂, x₁..x_{p′}, x̃, u, 1)`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::learners::{clip_prob, Learner, LearnerPolicy};
use crate::linalg::dot;
use crate::models::{logit, predict_prob, sigmoid, ModelKind, ModelParams, Observation};
use crate::monitor::{monitor_vector, split_assign, Conditioning, MonitorConfig, PredictionScale};
use crate::rng::{self, tag};
use crate::{Error, Result};

/// Which clock schedules changepoints and treatment-model switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClock {
    /// Index among monitored standard-of-care patients: a patient is placed
    /// at `1 + (number monitored before it)`.
    #[default]
    MonitorIndex,
    /// Absolute arrival time.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TreatmentModel {
    SingleLogistic { gamma: Vec<f64> },
    /// `A = max(A¹, A²)` with independent draws.
    MaxOfTwo { gamma1: Vec<f64>, gamma2: Vec<f64> },
}

impl TreatmentModel {
    fn check(&self, p: usize) -> Result<()> {
        let want = p + 4;
        let lens: Vec<usize> = match self {
            TreatmentModel::SingleLogistic { gamma } => vec![gamma.len()],
            TreatmentModel::MaxOfTwo { gamma1, gamma2 } => vec![gamma1.len(), gamma2.len()],
        };
        for l in lens {
            if l != want {
                return Err(Error::DimensionMismatch { expected: want, got: l });
            }
        }
        Ok(())
    }

    /// `P(A = 1)` at treatment features `f`.
    pub fn propensity(&self, f: &[f64]) -> f64 {
        match self {
            TreatmentModel::SingleLogistic { gamma } => sigmoid(dot(gamma, f)),
            TreatmentModel::MaxOfTwo { gamma1, gamma2 } => {
                let p1 = sigmoid(dot(gamma1, f));
                let p2 = sigmoid(dot(gamma2, f));
                1.0 - (1.0 - p1) * (1.0 - p2)
            }
        }
    }

    fn draw<R: rand::Rng + ?Sized>(&self, f: &[f64], r: &mut R) -> u8 {
        match self {
            TreatmentModel::SingleLogistic { gamma } => u8::from(rng::bernoulli(r, sigmoid(dot(gamma, f)))),
            TreatmentModel::MaxOfTwo { gamma1, gamma2 } => {
                let a1 = rng::bernoulli(r, sigmoid(dot(gamma1, f)));
                let a2 = rng::bernoulli(r, sigmoid(dot(gamma2, f)));
                u8::from(a1 || a2)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentPhase {
    /// First clock value at which this model applies.
    pub start: usize,
    pub model: TreatmentModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Number of covariates `p′`.
    pub p: usize,
    pub outcome_kind: ModelKind,
    pub theta: Vec<f64>,
    pub delta: Vec<f64>,
    /// Changepoint on `clock`; `None` for no change.
    pub kappa: Option<usize>,
    #[serde(default)]
    pub clock: EventClock,
    pub treatment: Vec<TreatmentPhase>,
    pub learner: LearnerPolicy,
    pub pretrain_size: usize,
    /// Share of standard-of-care patients routed to monitoring.
    pub monitor_fraction: f64,
    /// Number of monitored standard-of-care patients to generate.
    pub horizon: usize,
    /// Cap on generated patients; defaults to `50·horizon + 1000`.
    #[serde(default)]
    pub max_patients: Option<usize>,
    /// Monitoring model suggested for this scenario.
    pub monitor_kind: ModelKind,
    pub conditioning: Conditioning,
    /// Prediction scale suggested for monitoring; `None` follows the model kind.
    #[serde(default)]
    pub monitor_scale: Option<PredictionScale>,
}

impl ScenarioConfig {
    /// `base` with the model kind, conditioning set and prediction scale
    /// this scenario suggests.
    pub fn suggested_monitor(&self, base: MonitorConfig) -> MonitorConfig {
        MonitorConfig {
            kind: self.monitor_kind,
            conditioning: self.conditioning,
            prediction_scale: base.prediction_scale.or(self.monitor_scale),
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.p + 3;
        if self.theta.len() != q {
            return Err(Error::DimensionMismatch { expected: q, got: self.theta.len() });
        }
        if self.delta.len() != q {
            return Err(Error::DimensionMismatch { expected: q, got: self.delta.len() });
        }
        if self.treatment.is_empty() {
            return Err(Error::InvalidConfig("treatment schedule is empty".to_string()));
        }
        for w in self.treatment.windows(2) {
            if w[1].start <= w[0].start {
                return Err(Error::InvalidConfig("treatment schedule starts must increase".to_string()));
            }
        }
        for ph in &self.treatment {
            ph.model.check(self.p)?;
        }
        if !(self.monitor_fraction > 0.0 && self.monitor_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("monitor_fraction {} not in (0,1]", self.monitor_fraction)));
        }
        self.learner.validate()
    }

    fn phase(&self, clock: usize) -> &TreatmentModel {
        let mut cur = &self.treatment[0].model;
        for ph in &self.treatment {
            if ph.start <= clock {
                cur = &ph.model;
            }
        }
        cur
    }

    fn outcome_params(&self) -> Result<ModelParams> {
        ModelParams::new(self.theta.clone(), self.delta.clone(), self.outcome_kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub x_tilde: f64,
    pub u: f64,
    pub prediction: f64,
    pub a: u8,
    /// Untreated potential outcome; observed only when `a == 0`.
    pub y: u8,
    pub shifted: bool,
    /// Index among all standard-of-care patients.
    pub soc_index: Option<usize>,
    /// Index among monitored standard-of-care patients.
    pub monitor_index: Option<usize>,
}

impl PatientRecord {
    /// `(x, x̃, u, 1)`.
    pub fn outcome_features(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.x.len() + 3);
        z.extend_from_slice(&self.x);
        z.extend_from_slice(&[self.x_tilde, self.u, 1.0]);
        z
    }

    /// Monitoring predictor vector for the given conditioning set.
    pub fn monitor_features(&self, c: Conditioning, scale: PredictionScale) -> Vec<f64> {
        monitor_vector(self.prediction, self.x_tilde, c, scale)
    }
}

fn draw_covariates(p: usize, seed: u64, stream: u64, t: usize) -> (Vec<f64>, f64, f64) {
    let mut r = rng::substream(seed, stream, t as u64);
    let x: Vec<f64> = (0..p).map(|_| rng::uniform_pm1(&mut r)).collect();
    let xt = rng::uniform_pm1(&mut r);
    let u = rng::uniform_pm1(&mut r);
    (x, xt, u)
}

/// Generates the patient arriving at absolute time `t` whose event clock
/// reads `clock`, given the active learner's prediction function.
pub fn gen_patient(cfg: &ScenarioConfig, t: usize, clock: usize, learner: &Learner, seed: u64) -> Result<PatientRecord> {
    let (x, x_tilde, u) = draw_covariates(cfg.p, seed, tag::COVARIATES, t);
    let prediction = learner.predict(&x);
    let mut f = Vec::with_capacity(cfg.p + 4);
    f.push(logit(clip_prob(prediction)));
    f.extend_from_slice(&x);
    f.extend_from_slice(&[x_tilde, u, 1.0]);
    let mut tr = rng::substream(seed, tag::TREATMENT, t as u64);
    let a = cfg.phase(clock).draw(&f, &mut tr);
    let shifted = cfg.kappa.is_some_and(|k| clock >= k);
    let mut rec = PatientRecord { t, x, x_tilde, u, prediction, a, y: 0, shifted, soc_index: None, monitor_index: None };
    let pr = predict_prob(&cfg.outcome_params()?, &rec.outcome_features(), shifted)?;
    let mut orng = rng::substream(seed, tag::OUTCOME, t as u64);
    rec.y = u8::from(rng::bernoulli(&mut orng, pr));
    Ok(rec)
}

/// Pretraining sample from the pre-change law.
pub fn pretrain_data(cfg: &ScenarioConfig, seed: u64) -> Result<Vec<(Vec<f64>, u8)>> {
    let params = cfg.outcome_params()?;
    (0..cfg.pretrain_size)
        .map(|i| {
            let (x, xt, u) = draw_covariates(cfg.p, seed, tag::PRETRAIN, i);
            let mut z = x.clone();
            z.extend_from_slice(&[xt, u, 1.0]);
            let pr = predict_prob(&params, &z, false)?;
            let mut r = rng::substream(seed, tag::PRETRAIN, (1u64 << 40) + i as u64);
            Ok((x, u8::from(rng::bernoulli(&mut r, pr))))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub records: Vec<PatientRecord>,
    /// Absolute times of the observations the learner trained on after
    /// deployment.
    pub learner_update_times: Vec<usize>,
    pub monitored: usize,
}

impl Simulation {
    /// Monitored records in order.
    pub fn monitored_records(&self) -> impl Iterator<Item = &PatientRecord> {
        self.records.iter().filter(|r| r.monitor_index.is_some())
    }

    /// Monitoring stream with `t` set to the monitored index.
    pub fn monitor_stream(&self, c: Conditioning, scale: PredictionScale) -> Result<Vec<Observation>> {
        self.monitored_records()
            .map(|r| Observation::new(r.monitor_index.unwrap_or(0), r.monitor_features(c, scale), r.y))
            .collect()
    }

    /// Absolute time of the `i`-th monitored patient (1-based).
    pub fn absolute_time(&self, monitor_index: usize) -> Option<usize> {
        self.monitored_records().nth(monitor_index.checked_sub(1)?).map(|r| r.t)
    }
}

/// Runs the generator until `horizon` monitored patients have arrived or
/// the patient cap is reached.
pub fn simulate(cfg: &ScenarioConfig, seed: u64) -> Result<Simulation> {
    cfg.validate()?;
    let pre = pretrain_data(cfg, seed)?;
    let mut learner = Learner::new(&cfg.learner, cfg.p, &pre)?;
    let cap = cfg.max_patients.unwrap_or(50 * cfg.horizon + 1000);
    let mut records = Vec::new();
    let mut soc = 0usize;
    let mut monitored = 0usize;
    let mut t = 0usize;
    while monitored < cfg.horizon && t < cap {
        t += 1;
        let clock = match cfg.clock {
            EventClock::MonitorIndex => monitored + 1,
            EventClock::Absolute => t,
        };
        let mut rec = gen_patient(cfg, t, clock, &learner, seed)?;
        if rec.a == 0 {
            soc += 1;
            rec.soc_index = Some(soc);
            if split_assign(seed, t, cfg.monitor_fraction) {
                monitored += 1;
                rec.monitor_index = Some(monitored);
            } else {
                learner.observe_update(t, &rec.x, rec.y)?;
            }
        }
        records.push(rec);
    }
    let learner_update_times = learner.update_times().to_vec();
    Ok(Simulation { records, learner_update_times, monitored })
}

/// Standard-of-care subsequence in arrival order.
pub fn soc_filter(records: &[PatientRecord]) -> Vec<&PatientRecord> {
    records.iter().filter(|r| r.a == 0).collect()
}

fn zeros(n: usize) -> Vec<f64> {
    vec![0.0; n]
}

/// Outcome vector on `(x₁..x₈, x̃, u, 1)` from its leading `x` entries.
fn theta8(lead: &[f64], xt: f64, u: f64, int: f64) -> Vec<f64> {
    let mut v = zeros(8);
    v[..lead.len()].copy_from_slice(lead);
    v.extend_from_slice(&[xt, u, int]);
    v
}

/// Treatment vector on `(logit f̂, x₁..x_{p′}, x̃, u, 1)`.
fn gamma(p: usize, f: f64, xt: f64, u: f64, int: f64) -> Vec<f64> {
    let mut v = vec![f];
    v.extend(zeros(p));
    v.extend_from_slice(&[xt, u, int]);
    v
}

fn single(start: usize, g: Vec<f64>) -> TreatmentPhase {
    TreatmentPhase { start, model: TreatmentModel::SingleLogistic { gamma: g } }
}

fn max_of_two(start: usize, g1: Vec<f64>, g2: Vec<f64>) -> TreatmentPhase {
    TreatmentPhase { start, model: TreatmentModel::MaxOfTwo { gamma1: g1, gamma2: g2 } }
}

/// Names accepted by [`scenario_catalog`].
pub const CATALOG: &[&str] = &[
    "ce_pred",
    "ce_pred:oracle",
    "ce_pred_xtilde",
    "tc_pred",
    "tc_pred_xtilde",
    "retrain_null_highdim",
    "big_shift",
    "big_shift:ewaf",
    "small_shift",
    "small_shift:ewaf",
    "trust_none",
    "trust_calibrated",
    "trust_over",
    "symmetric_shift",
    "symmetric_shift:none",
    "symmetric_shift:calibrated",
    "symmetric_shift:over",
    "highrisk_shift",
    "highrisk_shift:none",
    "highrisk_shift:calibrated",
    "highrisk_shift:over",
    "tc_violation:never",
    "tc_violation:<t>",
    "naive_baseline",
];

fn trust_gamma(level: &str) -> Result<f64> {
    match level {
        "none" => Ok(0.01),
        "calibrated" => Ok(1.0),
        "over" => Ok(5.0),
        other => Err(Error::UnknownScenario(format!("trust level '{other}'"))),
    }
}

/// Builds a named scenario for non-contamination size `m` and horizon
/// multiple `k` (`horizon = ⌊mK⌋` monitored patients). Changepoints and
/// propensity switches are placed on the monitored-patient clock.
pub fn scenario_catalog(name: &str, m: usize, k: f64) -> Result<ScenarioConfig> {
    let horizon = libm::floor(m as f64 * k + 1e-9) as usize;
    let mid = horizon / 2 + 1;
    let (base, variant) = match name.split_once(':') {
        Some((b, v)) => (b, Some(v)),
        None => (name, None),
    };
    let ce_theta = theta8(&[2.0, 1.0, 1.0, 1.0], 0.0, 0.0, 0.0);
    let mut cfg = ScenarioConfig {
        name: name.to_string(),
        p: 8,
        outcome_kind: ModelKind::LogitShift,
        theta: ce_theta.clone(),
        delta: zeros(11),
        kappa: None,
        clock: EventClock::MonitorIndex,
        treatment: Vec::new(),
        learner: LearnerPolicy::Locked,
        pretrain_size: 200,
        monitor_fraction: 1.0,
        horizon,
        max_patients: None,
        monitor_kind: ModelKind::LogitShift,
        conditioning: Conditioning::PredictionOnly,
        monitor_scale: None,
    };
    let no_variant = |cfg: ScenarioConfig| -> Result<ScenarioConfig> {
        match variant {
            None => Ok(cfg),
            Some(_) => Err(Error::UnknownScenario(name.to_string())),
        }
    };
    match base {
        "ce_pred" => {
            cfg.treatment = vec![single(1, gamma(8, 0.3, 0.0, 0.0, 0.0)), single(mid, gamma(8, 0.6, 0.0, 0.0, 0.0))];
            match variant {
                None => {}
                // The true risk as the prediction, so the monitored model is
                // known exactly: θ₀ = (1, 0) on (logit f̂, 1).
                Some("oracle") => {
                    let mut beta = cfg.theta[..8].to_vec();
                    beta.push(0.0);
                    cfg.learner = LearnerPolicy::Fixed { beta };
                }
                Some(_) => return Err(Error::UnknownScenario(name.to_string())),
            }
            Ok(cfg)
        }
        "ce_pred_xtilde" => {
            cfg.theta = theta8(&[2.0, 1.0, 1.0, 1.0], 1.0, 0.0, 0.0);
            cfg.treatment = vec![single(1, gamma(8, 0.3, 0.1, 0.0, 0.0)), single(mid, gamma(8, 0.6, 0.2, 0.0, 0.0))];
            cfg.conditioning = Conditioning::PredictionPlusCovariates;
            no_variant(cfg)
        }
        "tc_pred" | "tc_pred_xtilde" => {
            let xt = base == "tc_pred_xtilde";
            cfg.outcome_kind = ModelKind::RiskShift;
            cfg.monitor_kind = ModelKind::RiskShift;
            cfg.theta = theta8(&[2.0, 1.0, 1.0, 1.0], if xt { 1.0 } else { 0.0 }, 1.0, 0.0);
            let g1 = gamma(8, 0.0, 0.0, 1.0, -2.0);
            let (a, b) = if xt { (0.3, 0.6) } else { (0.0, 0.0) };
            cfg.treatment = vec![max_of_two(1, g1.clone(), gamma(8, 0.2, a, 0.0, 0.0)), max_of_two(mid, g1, gamma(8, 0.4, b, 0.0, 0.0))];
            if xt {
                cfg.conditioning = Conditioning::PredictionPlusCovariates;
            }
            no_variant(cfg)
        }
        "retrain_null_highdim" => {
            cfg.p = 50;
            let mut th = vec![2.0, 1.0, 1.0];
            th.extend(zeros(47));
            th.extend_from_slice(&[0.0, 0.0, 0.0]);
            cfg.theta = th;
            cfg.delta = zeros(53);
            cfg.treatment = vec![single(1, gamma(50, 0.5, 0.0, 0.0, 0.0))];
            cfg.learner = LearnerPolicy::RidgeRetrain { lambda: 1.0, retrain_every: 20 };
            cfg.monitor_fraction = 0.6;
            cfg.monitor_kind = ModelKind::RiskShift;
            no_variant(cfg)
        }
        "big_shift" | "small_shift" => {
            cfg.delta = if base == "big_shift" {
                theta8(&[-1.6, -0.8, -0.8, -0.8], 0.0, 0.0, 0.0)
            } else {
                theta8(&[-1.0, -0.5, -0.5, -0.5], 0.0, 0.0, 0.0)
            };
            cfg.kappa = Some(m + 50);
            cfg.treatment = vec![single(1, gamma(8, 0.15, 0.0, 0.0, 0.0))];
            match variant {
                None | Some("locked") => {}
                Some("ewaf") => {
                    cfg.learner = LearnerPolicy::Ewaf { windows: vec![25, 50, 100, 0], eta: 0.5, lambda: 0.3, retrain_every: 10, recalibrate: true };
                    cfg.monitor_fraction = 0.6;
                }
                Some(_) => return Err(Error::UnknownScenario(name.to_string())),
            }
            Ok(cfg)
        }
        "trust_none" | "trust_calibrated" | "trust_over" | "symmetric_shift" | "highrisk_shift" => {
            let (shape, level) = match base {
                "symmetric_shift" | "highrisk_shift" => (base, variant.unwrap_or("calibrated")),
                _ => {
                    if variant.is_some() {
                        return Err(Error::UnknownScenario(name.to_string()));
                    }
                    ("highrisk_shift", &base["trust_".len()..])
                }
            };
            let int = if shape == "highrisk_shift" { -0.75 } else { 0.0 };
            cfg.delta = theta8(&[-1.0, -0.5, -0.5, -0.5], 0.0, 0.0, int);
            cfg.kappa = Some(m + 50);
            cfg.treatment = vec![single(1, gamma(8, trust_gamma(level)?, 0.0, 0.0, 0.0))];
            Ok(cfg)
        }
        "tc_violation" => {
            let onset = match variant {
                Some("never") => None,
                Some(v) => Some(v.parse::<usize>().map_err(|_| Error::UnknownScenario(name.to_string()))?),
                None => return Err(Error::UnknownScenario(format!("{name} needs an onset, e.g. tc_violation:100"))),
            };
            cfg.outcome_kind = ModelKind::RiskShift;
            cfg.monitor_kind = ModelKind::RiskShift;
            cfg.delta = theta8(&[-0.1, -0.02], 0.0, 0.0, 0.0);
            cfg.kappa = Some(m + 100);
            // The shift is close to linear in logit f̂, so a risk-scale
            // monitor on logit predictions tracks it more closely.
            cfg.monitor_scale = Some(PredictionScale::Logit);
            let g2 = gamma(8, 0.8, 0.0, 0.0, 0.0);
            cfg.treatment = vec![max_of_two(1, gamma(8, 0.0, 0.0, 1.0, -1.0), g2.clone())];
            if let Some(o) = onset {
                cfg.treatment.push(max_of_two((m + o).max(2), gamma(8, -0.5, 0.0, 1.0, -1.0), g2));
            }
            Ok(cfg)
        }
        "naive_baseline" => {
            cfg.treatment = vec![single(1, gamma(8, 1.0, 0.0, 0.0, -0.5)), single(201, gamma(8, 5.0, 0.0, 0.0, -2.5))];
            no_variant(cfg)
        }
        _ => Err(Error::UnknownScenario(name.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn locked_learner(cfg: &ScenarioConfig, seed: u64) -> Learner {
        Learner::new(&cfg.learner, cfg.p, &pretrain_data(cfg, seed).unwrap()).unwrap()
    }

    #[test]
    fn zero_gamma_gives_half_propensity() {
        let m = TreatmentModel::SingleLogistic { gamma: zeros(12) };
        assert_eq!(m.propensity(&[0.3; 12]), 0.5);
    }

    #[test]
    fn max_of_two_matches_product_oracle() {
        let g1 = gamma(8, 0.0, 0.0, 1.0, -2.0);
        let g2 = gamma(8, 0.4, 0.0, 0.0, 0.0);
        let mut f = vec![0.8];
        f.extend(zeros(8));
        f.extend_from_slice(&[0.0, 0.5, 1.0]);
        let p1 = sigmoid(0.5 - 2.0);
        let p2 = sigmoid(0.32);
        let want = 1.0 - (1.0 - p1) * (1.0 - p2);
        let model = TreatmentModel::MaxOfTwo { gamma1: g1.clone(), gamma2: g2 };
        assert!((model.propensity(&f) - want).abs() < 1e-15);
        let mut r = rng::substream(1, 0, 0);
        let n = 100_000;
        let hits: usize = (0..n).map(|_| usize::from(model.draw(&f, &mut r))).sum();
        let phat = hits as f64 / n as f64;
        assert!((phat - want).abs() < 3.0 * libm::sqrt(want * (1.0 - want) / n as f64));
        let mut f0 = f.clone();
        f0[10] = 0.0;
        assert!((sigmoid(dot(&g1, &f0)) - 0.11920292202211755).abs() < 1e-15);
    }

    #[test]
    fn catalog_rows() {
        let big = scenario_catalog("big_shift", 100, 4.0).unwrap();
        assert_eq!(big.delta, vec![-1.6, -0.8, -0.8, -0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let over = scenario_catalog("trust_over", 100, 4.0).unwrap();
        match &over.treatment[0].model {
            TreatmentModel::SingleLogistic { gamma } => assert_eq!(gamma[0], 5.0),
            _ => panic!(),
        }
        let hd = scenario_catalog("retrain_null_highdim", 100, 4.0).unwrap();
        assert_eq!(hd.theta.len(), 53);
        assert_eq!(&hd.theta[..4], &[2.0, 1.0, 1.0, 0.0]);
        hd.validate().unwrap();
        for n in ["ce_pred", "ce_pred_xtilde", "tc_pred", "tc_pred_xtilde", "small_shift:ewaf", "symmetric_shift:none", "tc_violation:300", "naive_baseline"] {
            scenario_catalog(n, 100, 4.0).unwrap().validate().unwrap();
        }
        assert!(matches!(scenario_catalog("nope", 100, 4.0), Err(Error::UnknownScenario(_))));
        assert!(scenario_catalog("ce_pred:x", 100, 4.0).is_err());
        assert!(scenario_catalog("tc_violation", 100, 4.0).is_err());
    }

    #[test]
    fn outcome_ignores_treatment_model() {
        let a = scenario_catalog("ce_pred", 50, 4.0).unwrap();
        let mut b = a.clone();
        b.treatment = vec![single(1, gamma(8, -3.0, 0.0, 0.0, 1.0))];
        let la = locked_learner(&a, 4);
        for t in 1..200 {
            let ra = gen_patient(&a, t, t, &la, 4).unwrap();
            let rb = gen_patient(&b, t, t, &la, 4).unwrap();
            assert_eq!(ra.y, rb.y);
            assert_eq!(ra.x, rb.x);
        }
    }

    #[test]
    fn soc_filter_indices() {
        let cfg = scenario_catalog("ce_pred", 50, 4.0).unwrap();
        let sim = simulate(&cfg, 5).unwrap();
        let soc = soc_filter(&sim.records);
        let want: Vec<usize> = sim.records.iter().filter(|r| r.a == 0).map(|r| r.t).collect();
        assert_eq!(soc.iter().map(|r| r.t).collect::<Vec<_>>(), want);
        assert_eq!(sim.monitored, 200);
        assert!(soc.iter().enumerate().all(|(i, r)| r.soc_index == Some(i + 1)));
        let all_treated = ScenarioConfig { treatment: vec![single(1, gamma(8, 0.0, 0.0, 0.0, 50.0))], max_patients: Some(100), ..cfg };
        let sim = simulate(&all_treated, 5).unwrap();
        assert!(soc_filter(&sim.records).is_empty());
        assert!(sim.monitor_stream(Conditioning::PredictionOnly, PredictionScale::Logit).unwrap().is_empty());
    }

    #[test]
    fn uniform_covariates_ks() {
        let mut xs: Vec<f64> = (0..10_000).map(|t| draw_covariates(1, 9, tag::COVARIATES, t).0[0]).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = (x + 1.0) / 2.0;
                f64::max((i as f64 + 1.0) / n - f, f - i as f64 / n)
            })
            .fold(0.0, f64::max);
        // Kolmogorov critical value at p = 0.01.
        assert!(d < 1.628 / libm::sqrt(n), "D = {d}");
    }

    #[test]
    fn replay_and_split_disjointness() {
        let cfg = scenario_catalog("retrain_null_highdim", 25, 4.0).unwrap();
        let a = simulate(&cfg, 11).unwrap();
        let b = simulate(&cfg, 11).unwrap();
        assert_eq!(a.records, b.records);
        let mon: Vec<usize> = a.monitored_records().map(|r| r.t).collect();
        assert!(a.learner_update_times.iter().all(|t| !mon.contains(t)));
        assert!(!a.learner_update_times.is_empty());
        let obs = a.monitor_stream(Conditioning::PredictionOnly, PredictionScale::Logit).unwrap();
        assert_eq!(obs.len(), 100);
        assert_eq!(a.absolute_time(1), Some(mon[0]));
    }

    #[test]
    fn shift_flag_follows_monitor_clock() {
        let cfg = scenario_catalog("big_shift", 50, 4.0).unwrap();
        let sim = simulate(&cfg, 3).unwrap();
        for r in sim.monitored_records() {
            assert_eq!(r.shifted, r.monitor_index.unwrap() >= 100);
        }
    }
}
