//! Replicate pipelines and summary metrics.
//!
//! A replicate simulates one scenario stream and runs one or more monitors
//! (and optionally the naive misclassification CUSUM) on the same monitored
//! data, so comparisons between monitors are paired.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::learners::threshold_classify;
use crate::monitor::{run_monitor, MonitorConfig};
use crate::rng::{self, tag};
use crate::simgen::{simulate, ScenarioConfig, Simulation};
use crate::{Error, Result};

/// Seed of replicate `r` under `master_seed`.
pub fn replicate_seed(master_seed: u64, r: usize) -> u64 {
    rng::derive_seed(master_seed, tag::REPLICATE, r as u64)
}

/// Alarm of one monitor on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    /// Alarm index on the monitored-patient clock.
    pub alarm_time_soc: Option<usize>,
    /// Absolute arrival time of the alarming patient.
    pub alarm_time_abs: Option<usize>,
    pub valid: bool,
    pub error: Option<String>,
}

/// Settings of the naive misclassification CUSUM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NaiveConfig {
    pub cutoff: f64,
    pub allowance: f64,
    pub alpha: f64,
    pub b: usize,
}

impl Default for NaiveConfig {
    fn default() -> Self {
        Self { cutoff: 0.7, allowance: 0.05, alpha: 0.1, b: 500 }
    }
}

/// Result of the naive chart on one stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveResult {
    pub alarm_time: Option<usize>,
    pub reference_rate: f64,
    pub limit: f64,
}

/// One step of the Bernoulli CUSUM `S ← max(0, S + e − p₀ − k)`.
pub fn bernoulli_cusum_step(s: f64, e: u8, p0: f64, k: f64) -> f64 {
    (s + f64::from(e) - p0 - k).max(0.0)
}

/// Naive CUSUM of misclassification indicators. The first `m` indicators
/// estimate the reference rate; the static limit is the `(1 − α)` quantile
/// of the chart maximum under Bernoulli(p̂₀) resampling.
pub fn naive_cusum(errors: &[u8], m: usize, cfg: &NaiveConfig, seed: u64) -> Result<NaiveResult> {
    if errors.len() < m || m == 0 {
        return Err(Error::StreamExhausted { needed: m.max(1), got: errors.len() });
    }
    let p0 = errors[..m].iter().map(|&e| f64::from(e)).sum::<f64>() / m as f64;
    let len = errors.len() - m;
    let mut maxima: Vec<f64> = (0..cfg.b)
        .map(|b| {
            let mut r = rng::substream(seed, tag::NAIVE, b as u64);
            let mut s = 0.0f64;
            let mut best = 0.0f64;
            for _ in 0..len {
                s = bernoulli_cusum_step(s, u8::from(rng::bernoulli(&mut r, p0)), p0, cfg.allowance);
                best = best.max(s);
            }
            best
        })
        .collect();
    maxima.sort_by(f64::total_cmp);
    let idx = libm::ceil((1.0 - cfg.alpha) * cfg.b as f64) as usize;
    let limit = maxima[idx.clamp(1, cfg.b) - 1];
    let mut s = 0.0;
    let mut alarm = None;
    for (i, &e) in errors[m..].iter().enumerate() {
        s = bernoulli_cusum_step(s, e, p0, cfg.allowance);
        if s > limit {
            alarm = Some(m + i + 1);
            break;
        }
    }
    Ok(NaiveResult { alarm_time: alarm, reference_rate: p0, limit })
}

/// Learner diagnostics of one replicate, by quarter of the horizon.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearnerSnapshot {
    pub auc: Vec<Option<f64>>,
    pub calibration: Vec<Vec<CalibrationBin>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub monitors: Vec<ReplicateOutcome>,
    pub naive: Option<ReplicateOutcome>,
    pub learner: LearnerSnapshot,
}

/// Number of periods used for learner diagnostics.
pub const PERIODS: usize = 4;
pub const CALIBRATION_BINS: usize = 10;

fn disjointness_audit(sim: &Simulation) -> Result<()> {
    let mut mon: Vec<usize> = sim.monitored_records().map(|r| r.t).collect();
    mon.sort_unstable();
    for t in &sim.learner_update_times {
        if mon.binary_search(t).is_ok() {
            return Err(Error::OutOfRange(alloc::format!("observation t={t} used for both monitoring and updating")));
        }
    }
    Ok(())
}

fn learner_snapshot(sim: &Simulation, horizon: usize) -> LearnerSnapshot {
    let mut preds: Vec<Vec<f64>> = vec![Vec::new(); PERIODS];
    let mut ys: Vec<Vec<u8>> = vec![Vec::new(); PERIODS];
    for r in sim.monitored_records() {
        let i = r.monitor_index.unwrap_or(1) - 1;
        let p = (i * PERIODS / horizon.max(1)).min(PERIODS - 1);
        preds[p].push(r.prediction);
        ys[p].push(r.y);
    }
    LearnerSnapshot {
        auc: preds.iter().zip(&ys).map(|(p, y)| auc(p, y).ok()).collect(),
        calibration: preds.iter().zip(&ys).map(|(p, y)| calibration_bins(p, y, CALIBRATION_BINS)).collect(),
    }
}

fn outcome_from(replicate: usize, seed: u64, sim: &Simulation, res: Result<Option<usize>>) -> ReplicateOutcome {
    match res {
        Ok(a) => ReplicateOutcome {
            replicate,
            seed,
            alarm_time_soc: a,
            alarm_time_abs: a.and_then(|i| sim.absolute_time(i)),
            valid: true,
            error: None,
        },
        Err(e) => invalid(replicate, seed, e),
    }
}

fn invalid(replicate: usize, seed: u64, e: Error) -> ReplicateOutcome {
    ReplicateOutcome { replicate, seed, alarm_time_soc: None, alarm_time_abs: None, valid: false, error: Some(e.to_string()) }
}

/// Simulates replicate `replicate` and runs every monitor in `monitors` on
/// its monitored stream. Each monitor's bootstrap seed is derived from the
/// replicate seed, so results depend only on `(master_seed, replicate)`.
pub fn run_replicate(
    scenario: &ScenarioConfig,
    monitors: &[MonitorConfig],
    naive: Option<&NaiveConfig>,
    replicate: usize,
    master_seed: u64,
) -> ReplicateResult {
    let seed = replicate_seed(master_seed, replicate);
    let fail_all = |e: &Error| ReplicateResult {
        monitors: monitors.iter().map(|_| invalid(replicate, seed, e.clone())).collect(),
        naive: naive.map(|_| invalid(replicate, seed, e.clone())),
        learner: LearnerSnapshot::default(),
    };
    let sim = match simulate(scenario, seed).and_then(|s| disjointness_audit(&s).map(|_| s)) {
        Ok(s) => s,
        Err(e) => return fail_all(&e),
    };
    let mon_seed = rng::derive_seed(seed, tag::MONITOR, 0);
    let outcomes = monitors
        .iter()
        .map(|mc| {
            let mc = MonitorConfig { master_seed: mon_seed, ..mc.clone() };
            let res = sim
                .monitor_stream(mc.conditioning, mc.scale())
                .and_then(|stream| run_monitor(&mc, &stream))
                .map(|r| r.alarm_time);
            outcome_from(replicate, seed, &sim, res)
        })
        .collect();
    let naive_out = naive.map(|nc| {
        let m = monitors.first().map_or(100, |mc| mc.m);
        let errors: Vec<u8> = sim
            .monitored_records()
            .map(|r| u8::from(threshold_classify(r.prediction, nc.cutoff) != r.y))
            .collect();
        let res = naive_cusum(&errors, m, nc, mon_seed).map(|r| r.alarm_time);
        outcome_from(replicate, seed, &sim, res)
    });
    ReplicateResult { monitors: outcomes, naive: naive_out, learner: learner_snapshot(&sim, scenario.horizon) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q25: Option<f64>,
    pub q50: Option<f64>,
    pub q75: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_predicted: Option<f64>,
    pub observed_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Share of valid replicates alarming before the changepoint (every
    /// alarm when there is none).
    pub false_alarm_rate: Option<f64>,
    /// Share of valid replicates alarming at or after the changepoint.
    pub power: Option<f64>,
    /// Quantiles of `alarm − κ` over replicates without a false alarm,
    /// counting missed changes as infinite; `None` marks an infinite value.
    pub delay: Quantiles,
    /// Quantiles of the alarm time over valid replicates, no alarm counting
    /// as infinite.
    pub alarm_time: Quantiles,
    pub alarm_cdf: Vec<(usize, f64)>,
    /// Share of valid replicates with no alarm by the horizon.
    pub censored_mass: Option<f64>,
    /// Mean AUC of the learner's predictions per period.
    pub auc_by_period: Vec<Option<f64>>,
    /// Calibration of the learner's predictions per period, pooled over
    /// replicates.
    pub calibration_by_period: Vec<Vec<CalibrationBin>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub monitor: String,
    pub n_replicates: usize,
    pub invalid_count: usize,
    pub kappa: Option<usize>,
    pub horizon: usize,
    pub replicates: Vec<ReplicateOutcome>,
    pub metrics: Metrics,
}

/// Inverse-empirical-CDF quantile of values sorted ascending.
fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let idx = (libm::ceil(p * sorted.len() as f64) as usize).clamp(1, sorted.len()) - 1;
    let v = sorted[idx];
    v.is_finite().then_some(v)
}

fn quantiles(mut v: Vec<f64>) -> Quantiles {
    v.sort_by(f64::total_cmp);
    Quantiles { q25: quantile(&v, 0.25), q50: quantile(&v, 0.5), q75: quantile(&v, 0.75) }
}

/// Fraction of valid replicates that alarmed at or before each grid time.
pub fn alarm_cdf(outcomes: &[ReplicateOutcome], grid: &[usize]) -> Vec<(usize, f64)> {
    let valid: Vec<&ReplicateOutcome> = outcomes.iter().filter(|o| o.valid).collect();
    grid.iter()
        .map(|&g| {
            let hit = valid.iter().filter(|o| o.alarm_time_soc.is_some_and(|a| a <= g)).count();
            (g, if valid.is_empty() { 0.0 } else { hit as f64 / valid.len() as f64 })
        })
        .collect()
}

impl ExperimentReport {
    /// Aggregates replicate outcomes; the result does not depend on their
    /// order.
    pub fn aggregate(
        scenario: &str,
        monitor: &str,
        kappa: Option<usize>,
        horizon: usize,
        mut replicates: Vec<ReplicateOutcome>,
        learner: &[LearnerSnapshot],
    ) -> Self {
        replicates.sort_by_key(|o| o.replicate);
        let valid: Vec<&ReplicateOutcome> = replicates.iter().filter(|o| o.valid).collect();
        let nv = valid.len();
        let rate = |n: usize| (nv > 0).then(|| n as f64 / nv as f64);
        let kap = kappa.unwrap_or(usize::MAX);
        let false_alarms = valid.iter().filter(|o| o.alarm_time_soc.is_some_and(|a| a < kap)).count();
        let detections = valid.iter().filter(|o| o.alarm_time_soc.is_some_and(|a| a >= kap)).count();
        let delays: Vec<f64> = match kappa {
            Some(k) => valid
                .iter()
                .filter(|o| !o.alarm_time_soc.is_some_and(|a| a < k))
                .map(|o| o.alarm_time_soc.map_or(f64::INFINITY, |a| (a - k) as f64))
                .collect(),
            None => Vec::new(),
        };
        let times: Vec<f64> = valid.iter().map(|o| o.alarm_time_soc.map_or(f64::INFINITY, |a| a as f64)).collect();
        let step = (horizon / 40).max(1);
        let grid: Vec<usize> = (0..=horizon).step_by(step).chain(core::iter::once(horizon)).collect();
        let mut grid = grid;
        grid.dedup();
        let cdf = alarm_cdf(&replicates, &grid);
        let censored = rate(valid.iter().filter(|o| o.alarm_time_soc.is_none()).count());
        let periods = learner.iter().map(|l| l.auc.len()).max().unwrap_or(0);
        let auc_by_period = (0..periods)
            .map(|p| {
                let v: Vec<f64> = learner.iter().filter_map(|l| l.auc.get(p).copied().flatten()).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        let calibration_by_period = (0..periods)
            .map(|p| pool_bins(learner.iter().filter_map(|l| l.calibration.get(p))))
            .collect();
        let metrics = Metrics {
            false_alarm_rate: rate(false_alarms),
            power: kappa.and_then(|_| rate(detections)),
            delay: quantiles(delays),
            alarm_time: quantiles(times),
            alarm_cdf: cdf,
            censored_mass: censored,
            auc_by_period,
            calibration_by_period,
        };
        Self {
            scenario: scenario.to_string(),
            monitor: monitor.to_string(),
            n_replicates: replicates.len(),
            invalid_count: replicates.len() - nv,
            kappa,
            horizon,
            replicates,
            metrics,
        }
    }
}

fn pool_bins<'a>(tables: impl Iterator<Item = &'a Vec<CalibrationBin>>) -> Vec<CalibrationBin> {
    let mut out: Vec<CalibrationBin> = Vec::new();
    let mut sums: Vec<(f64, f64)> = Vec::new();
    for t in tables {
        if out.is_empty() {
            out = t.iter().map(|b| CalibrationBin { count: 0, mean_predicted: None, observed_rate: None, ..*b }).collect();
            sums = vec![(0.0, 0.0); t.len()];
        }
        for ((o, s), b) in out.iter_mut().zip(sums.iter_mut()).zip(t) {
            o.count += b.count;
            s.0 += b.mean_predicted.unwrap_or(0.0) * b.count as f64;
            s.1 += b.observed_rate.unwrap_or(0.0) * b.count as f64;
        }
    }
    for (o, s) in out.iter_mut().zip(&sums) {
        if o.count > 0 {
            o.mean_predicted = Some(s.0 / o.count as f64);
            o.observed_rate = Some(s.1 / o.count as f64);
        }
    }
    out
}

/// Area under the ROC curve via the rank-sum statistic (ties get midranks).
pub fn auc(predictions: &[f64], outcomes: &[u8]) -> Result<f64> {
    if predictions.len() != outcomes.len() {
        return Err(Error::DimensionMismatch { expected: predictions.len(), got: outcomes.len() });
    }
    let n1 = outcomes.iter().filter(|&&y| y == 1).count();
    let n0 = outcomes.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::SingleClass);
    }
    let mut idx: Vec<usize> = (0..predictions.len()).collect();
    idx.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && predictions[idx[j + 1]] == predictions[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| outcomes[k] == 1).count() as f64 * mid;
        i = j + 1;
    }
    let n1f = n1 as f64;
    Ok((rank_sum - n1f * (n1f + 1.0) / 2.0) / (n1f * n0 as f64))
}

/// Equal-width probability bins on `[0, 1]` with mean prediction and
/// observed outcome rate.
pub fn calibration_bins(predictions: &[f64], outcomes: &[u8], n_bins: usize) -> Vec<CalibrationBin> {
    let n_bins = n_bins.max(1);
    let mut acc = vec![(0usize, 0.0f64, 0.0f64); n_bins];
    for (&p, &y) in predictions.iter().zip(outcomes) {
        let b = ((p * n_bins as f64) as usize).min(n_bins - 1);
        acc[b].0 += 1;
        acc[b].1 += p;
        acc[b].2 += f64::from(y);
    }
    acc.iter()
        .enumerate()
        .map(|(i, &(c, sp, sy))| CalibrationBin {
            lower: i as f64 / n_bins as f64,
            upper: (i + 1) as f64 / n_bins as f64,
            count: c,
            mean_predicted: (c > 0).then(|| sp / c as f64),
            observed_rate: (c > 0).then(|| sy / c as f64),
        })
        .collect()
}

/// Runs `n` replicates sequentially and aggregates one report per monitor.
pub fn run_experiment(
    scenario: &ScenarioConfig,
    monitors: &[(String, MonitorConfig)],
    n: usize,
    master_seed: u64,
) -> Vec<ExperimentReport> {
    let cfgs: Vec<MonitorConfig> = monitors.iter().map(|(_, c)| c.clone()).collect();
    let results: Vec<ReplicateResult> = (0..n).map(|r| run_replicate(scenario, &cfgs, None, r, master_seed)).collect();
    reports_from(scenario, monitors.iter().map(|(n, _)| n.as_str()), &results)
}

/// One report per monitor from a set of replicate results.
pub fn reports_from<'a>(
    scenario: &ScenarioConfig,
    names: impl Iterator<Item = &'a str>,
    results: &[ReplicateResult],
) -> Vec<ExperimentReport> {
    let learner: Vec<LearnerSnapshot> = results.iter().map(|r| r.learner.clone()).collect();
    names
        .enumerate()
        .map(|(i, name)| {
            let outs = results.iter().map(|r| r.monitors[i].clone()).collect();
            ExperimentReport::aggregate(&scenario.name, name, scenario.kappa, scenario.horizon, outs, &learner)
        })
        .collect()
}
