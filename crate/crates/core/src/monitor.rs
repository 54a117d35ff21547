//! The monitoring loop: nuisance estimation on the non-contamination
//! window, batched plugin (or known-parameter) CUSUM, and the bootstrap
//! dynamic control limit.

use alloc::string::ToString;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::chart::{known_score, plugin_score, Norm, ScorePrefix};
use crate::dcl::{alpha_spend, BootstrapEnsemble, EnsembleMode, InformationEstimates, SpendingFunction};
use crate::estimation::{fit, sequential_update};
use crate::linalg::norm2;
use crate::learners::clip_prob;
use crate::models::{logit, ModelKind, Observation, ShiftCoords};
use crate::rng;
use crate::{Error, Result};

/// Covariates in the monitor's predictor vector besides the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Conditioning {
    /// `(f̂, 1)`.
    #[default]
    #[serde(rename = "pred")]
    PredictionOnly,
    /// `(f̂, x̃, 1)`.
    #[serde(rename = "pred+xt")]
    PredictionPlusCovariates,
}

impl Conditioning {
    pub fn dim(self) -> usize {
        match self {
            Conditioning::PredictionOnly => 2,
            Conditioning::PredictionPlusCovariates => 3,
        }
    }
}

/// How the prediction enters the predictor vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionScale {
    /// `logit f̂`.
    Logit,
    /// `f̂` itself.
    Probability,
}

impl PredictionScale {
    /// Logit for shifts on the log-odds scale, probability for shifts on
    /// the risk scale.
    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::LogitShift => PredictionScale::Logit,
            ModelKind::RiskShift => PredictionScale::Probability,
        }
    }
}

/// Predictor vector `(f̂, 1)` or `(f̂, x̃, 1)` with `f̂` on `scale`.
pub fn monitor_vector(prediction: f64, x_tilde: f64, c: Conditioning, scale: PredictionScale) -> Vec<f64> {
    let f = match scale {
        PredictionScale::Logit => logit(clip_prob(prediction)),
        PredictionScale::Probability => prediction,
    };
    match c {
        Conditioning::PredictionOnly => alloc::vec![f, 1.0],
        Conditioning::PredictionPlusCovariates => alloc::vec![f, x_tilde, 1.0],
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    Known(Vec<f64>),
    #[default]
    Plugin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub m: usize,
    #[serde(rename = "K")]
    pub k: f64,
    pub alpha_total: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub batch_size: usize,
    pub kind: ModelKind,
    pub norm: Norm,
    pub conditioning: Conditioning,
    /// `None` picks [`PredictionScale::for_kind`].
    #[serde(default)]
    pub prediction_scale: Option<PredictionScale>,
    pub theta_mode: ThetaMode,
    pub master_seed: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            m: 100,
            k: 4.0,
            alpha_total: 0.1,
            b: 500,
            batch_size: 10,
            kind: ModelKind::LogitShift,
            norm: Norm::L1,
            conditioning: Conditioning::PredictionOnly,
            prediction_scale: None,
            theta_mode: ThetaMode::Plugin,
            master_seed: 0,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be positive".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".to_string()));
        }
        if self.b == 0 {
            return Err(Error::InvalidConfig("B must be positive".to_string()));
        }
        SpendingFunction::new(self.alpha_total, self.k)?;
        if let ThetaMode::Known(t) = &self.theta_mode {
            if t.len() != self.conditioning.dim() {
                return Err(Error::DimensionMismatch { expected: self.conditioning.dim(), got: t.len() });
            }
        }
        Ok(())
    }

    pub fn scale(&self) -> PredictionScale {
        self.prediction_scale.unwrap_or_else(|| PredictionScale::for_kind(self.kind))
    }

    /// Last monitored SOC index, `⌊mK⌋`.
    pub fn horizon(&self) -> usize {
        libm::floor(self.m as f64 * self.k + 1e-9) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub c: f64,
    pub h: f64,
    pub survivors: usize,
    pub theta_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub survivors_final: usize,
    /// Batches that eliminated fewer than five bootstrap sequences.
    pub adequacy_warnings: usize,
    /// Times the information matrix needed ridge jitter to invert.
    pub jitter_events: usize,
    /// Nuisance refits that did not converge (the previous estimate was kept).
    pub mle_failures: usize,
    /// The stream ended before `⌊mK⌋`.
    pub truncated: bool,
    /// Largest observation index that entered any nuisance fit.
    pub max_fit_index: Option<usize>,
    /// Number of observations consumed.
    pub observations_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorResult {
    pub alarm_time: Option<usize>,
    pub trace: Vec<TraceRow>,
    pub final_theta_hat: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Runs the monitor over a SOC stream whose observations carry their SOC
/// index in `t` (1-based, increasing) and the conditioning vector in `z`.
pub fn run_monitor(cfg: &MonitorConfig, stream: &[Observation]) -> Result<MonitorResult> {
    cfg.validate()?;
    let m = cfg.m;
    if stream.len() < m {
        return Err(Error::StreamExhausted { needed: m, got: stream.len() });
    }
    let q = cfg.conditioning.dim();
    for o in stream {
        if o.z.len() != q {
            return Err(Error::DimensionMismatch { expected: q, got: o.z.len() });
        }
    }
    let coords = ShiftCoords::full(q);
    let d = coords.len();
    let sf = SpendingFunction::new(cfg.alpha_total, cfg.k)?;
    let horizon = cfg.horizon();
    let end = horizon.min(stream.len());
    let mut diag = Diagnostics { truncated: stream.len() < horizon, ..Diagnostics::default() };

    let warmup = &stream[..m];
    let (mode, mut mle) = match &cfg.theta_mode {
        ThetaMode::Known(t0) => (EnsembleMode::Known(t0.clone()), None),
        ThetaMode::Plugin => {
            let init = alloc::vec![0.0; q];
            let st = fit(warmup, &init)?;
            if !st.converged {
                return Err(Error::EstimationFailed(st.last_gradient_norm));
            }
            (EnsembleMode::Plugin, Some(st))
        }
    };
    let mut ensemble = BootstrapEnsemble::new(cfg.b, cfg.master_seed, mode, cfg.kind, coords.clone(), cfg.norm, q);
    let mut info = InformationEstimates::new(q);
    if let Some(st) = &mle {
        let zs: Vec<&[f64]> = warmup.iter().map(|o| o.z.as_slice()).collect();
        ensemble.init_noncontamination(&zs, &st.theta_hat);
        for o in warmup {
            info.add(&st.theta_hat, &o.z)?;
        }
        diag.max_fit_index = st.max_time;
    }

    let mut chart = ScorePrefix::new(m + 1, d);
    let mut trace = Vec::new();
    let mut alarm_time = None;
    let mut prev_v = 1.0;
    let mut start = m;
    let mut batch_sum = alloc::vec![0.0; d];
    while start < end {
        let stop = (start + cfg.batch_size).min(end);
        let batch = &stream[start..stop];
        batch_sum.iter_mut().for_each(|x| *x = 0.0);
        match (&cfg.theta_mode, &mle) {
            (ThetaMode::Known(t0), _) => {
                ensemble.begin_batch(None);
                for o in batch {
                    let s = known_score(o, t0, cfg.kind, &coords)?;
                    batch_sum.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
                    ensemble.step_ensemble(&o.z, t0)?;
                }
            }
            (ThetaMode::Plugin, Some(st)) => {
                let theta = st.theta_hat.clone();
                let zs: Vec<&[f64]> = batch.iter().map(|o| o.z.as_slice()).collect();
                let corr = info.batch_correction(&theta, &zs, cfg.kind, &coords)?;
                ensemble.begin_batch(Some(&corr));
                for o in batch {
                    let s = plugin_score(o, st, cfg.kind, &coords)?;
                    batch_sum.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
                    ensemble.step_ensemble(&o.z, &theta)?;
                }
                for o in batch {
                    info.add(&theta, &o.z)?;
                }
            }
            (ThetaMode::Plugin, None) => unreachable!("plugin mode always has an estimate"),
        }
        ensemble.close_batch();
        chart.append_score(&batch_sum)?;
        let c = chart.cusum_stat(cfg.norm)?;

        let t = batch[batch.len() - 1].t;
        let v = (stop as f64 / m as f64).min(cfg.k);
        let inc = alpha_spend(&sf, v)? - alpha_spend(&sf, prev_v)?;
        prev_v = v;
        let cl = ensemble.update_control_limit(inc.max(0.0))?;
        let theta_norm = mle.as_ref().map_or_else(
            || match &cfg.theta_mode {
                ThetaMode::Known(t0) => norm2(t0),
                ThetaMode::Plugin => 0.0,
            },
            |s| norm2(&s.theta_hat),
        );
        trace.push(TraceRow { t, c, h: cl.h, survivors: cl.survivors_after, theta_norm });
        diag.observations_used = stop;
        if c > cl.h {
            alarm_time = Some(t);
            break;
        }
        if let Some(st) = &mle {
            let next = sequential_update(st, batch)?;
            if next.converged {
                diag.max_fit_index = next.max_time;
                mle = Some(next);
            } else {
                // Keep the data but not the estimate.
                diag.mle_failures += 1;
                let mut kept = next;
                kept.theta_hat.clone_from(&st.theta_hat);
                diag.max_fit_index = kept.max_time;
                mle = Some(kept);
            }
        }
        start = stop;
    }
    if start >= end {
        diag.observations_used = end;
    }
    diag.survivors_final = ensemble.survivors();
    diag.adequacy_warnings = ensemble.adequacy_warnings;
    diag.jitter_events = info.jitter_events;
    let final_theta_hat = match (&mle, &cfg.theta_mode) {
        (Some(st), _) => st.theta_hat.clone(),
        (None, ThetaMode::Known(t0)) => t0.clone(),
        (None, ThetaMode::Plugin) => Vec::new(),
    };
    Ok(MonitorResult { alarm_time, trace, final_theta_hat, diagnostics: diag })
}

/// Routes the observation at absolute time `t` to monitoring (`true`) or to
/// model updating (`false`), by a keyed Bernoulli(`fraction`) draw.
pub fn split_assign(seed: u64, t: usize, fraction: f64) -> bool {
    if fraction >= 1.0 {
        return true;
    }
    let mut r = rng::substream(seed, rng::tag::SPLIT, t as u64);
    rng::bernoulli(&mut r, fraction)
}

/// Splits `items` into `(monitor, update)` using [`split_assign`] on the key
/// returned by `time_of`.
pub fn split_stream<T: Clone>(
    items: &[T],
    time_of: impl Fn(&T) -> usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::OutOfRange(alloc::format!("monitor fraction {fraction} not in (0,1]")));
    }
    let mut mon = Vec::new();
    let mut upd = Vec::new();
    for it in items {
        if split_assign(seed, time_of(it), fraction) {
            mon.push(it.clone());
        } else {
            upd.push(it.clone());
        }
    }
    Ok((mon, upd))
}
