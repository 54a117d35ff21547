//! Parallel replicate execution and the catalog experiment suites.

use cmi_cusum_core::experiments::{
    replicate_seed, reports_from, run_replicate, ExperimentReport, Metrics, NaiveConfig, ReplicateResult,
};
use cmi_cusum_core::models::ModelKind;
use cmi_cusum_core::monitor::{run_monitor, MonitorConfig, MonitorResult};
use cmi_cusum_core::rng::{derive_seed, tag};
use cmi_cusum_core::simgen::{simulate, ScenarioConfig, Simulation};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{AppError, AppResult};
use crate::formats::RunLabel;

pub fn thread_pool(jobs: Option<usize>) -> AppResult<rayon::ThreadPool> {
    if jobs == Some(0) {
        return Err(AppError::Config("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| AppError::Runtime(format!("thread pool: {e}")))
}

/// Runs replicates `0..n` on `pool`. Results are in replicate order and do
/// not depend on the number of threads.
pub fn run_replicates(
    pool: &rayon::ThreadPool,
    scenario: &ScenarioConfig,
    monitors: &[MonitorConfig],
    naive: Option<&NaiveConfig>,
    n: usize,
    master_seed: u64,
) -> Vec<ReplicateResult> {
    pool.install(|| (0..n).into_par_iter().map(|r| run_replicate(scenario, monitors, naive, r, master_seed)).collect())
}

/// One scenario with the monitors run on its shared replicate streams.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub scenario: ScenarioConfig,
    pub monitors: Vec<(String, MonitorConfig)>,
    pub naive: Option<NaiveConfig>,
}

/// Per-report entry of the summary JSON.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryEntry {
    #[serde(flatten)]
    pub label: RunLabel,
    pub seed: u64,
    pub n_replicates: usize,
    pub invalid_count: usize,
    pub kappa: Option<usize>,
    pub horizon: usize,
    pub metrics: Metrics,
}

impl Experiment {
    pub fn m(&self) -> usize {
        self.monitors.first().map_or(0, |(_, c)| c.m)
    }

    pub fn k(&self) -> f64 {
        self.monitors.first().map_or(0.0, |(_, c)| c.k)
    }

    fn label(&self, monitor: &str) -> RunLabel {
        RunLabel { scenario: self.scenario.name.clone(), monitor: monitor.to_string(), m: self.m(), k: self.k() }
    }

    /// Runs the experiment and returns one report per monitor, the naive
    /// chart last.
    pub fn run(&self, pool: &rayon::ThreadPool, n: usize, seed: u64) -> Vec<(RunLabel, ExperimentReport)> {
        let cfgs: Vec<MonitorConfig> = self.monitors.iter().map(|(_, c)| c.clone()).collect();
        let results = run_replicates(pool, &self.scenario, &cfgs, self.naive.as_ref(), n, seed);
        let mut out: Vec<(RunLabel, ExperimentReport)> = reports_from(
            &self.scenario,
            self.monitors.iter().map(|(name, _)| name.as_str()),
            &results,
        )
        .into_iter()
        .map(|r| (self.label(&r.monitor), r))
        .collect();
        if self.naive.is_some() {
            let learner: Vec<_> = results.iter().map(|r| r.learner.clone()).collect();
            let outs = results.iter().filter_map(|r| r.naive.clone()).collect();
            let rep = ExperimentReport::aggregate(
                &self.scenario.name,
                "naive",
                self.scenario.kappa,
                self.scenario.horizon,
                outs,
                &learner,
            );
            out.push((self.label("naive"), rep));
        }
        for (label, rep) in &out {
            if rep.invalid_count > 0 {
                log::warn!("{} / {}: {} of {} replicates invalid", label.scenario, label.monitor, rep.invalid_count, n);
            }
        }
        out
    }
}

pub fn summary_entry(label: &RunLabel, rep: &ExperimentReport, seed: u64) -> SummaryEntry {
    SummaryEntry {
        label: label.clone(),
        seed,
        n_replicates: rep.n_replicates,
        invalid_count: rep.invalid_count,
        kappa: rep.kappa,
        horizon: rep.horizon,
        metrics: rep.metrics.clone(),
    }
}

/// Seeds of a single run under `master_seed`: the stream is replicate 0 of
/// an experiment with the same seed, and the monitor uses that replicate's
/// bootstrap seed.
pub fn single_run_seeds(master_seed: u64) -> (u64, u64) {
    let rep = replicate_seed(master_seed, 0);
    (rep, derive_seed(rep, tag::MONITOR, 0))
}

/// Simulates replicate 0 of `scenario` and monitors it.
pub fn single_run(scenario: &ScenarioConfig, monitor: &MonitorConfig, master_seed: u64) -> AppResult<(Simulation, MonitorResult)> {
    let (rep, mon) = single_run_seeds(master_seed);
    let sim = simulate(scenario, rep)?;
    let stream = sim.monitor_stream(monitor.conditioning, monitor.scale())?;
    let cfg = MonitorConfig { master_seed: mon, ..monitor.clone() };
    let res = run_monitor(&cfg, &stream)?;
    Ok((sim, res))
}

/// Named experiment collections over the scenario catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    /// Null scenarios at m ∈ {50, 100, 200}.
    FalseAlarm,
    /// Big and small shifts, locked and retrained models.
    ShiftPower,
    /// Symmetric and high-risk shifts under three trust levels.
    Trust,
    /// Propensity changes that break time-constant selection bias.
    TcViolation,
    /// Continually retrained ridge model, risk- and logit-scale monitors.
    Retrain,
    /// Naive misclassification chart next to the score-based monitor.
    Naive,
}

/// One suite member: a catalog name with its default `m` and `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub scenario: String,
    pub m: usize,
    pub k: f64,
    /// Extra monitors run on the same streams, by model kind.
    pub alt_kinds: Vec<(String, ModelKind)>,
    pub naive: bool,
}

fn entry(name: &str, m: usize, k: f64) -> SuiteEntry {
    SuiteEntry { scenario: name.to_string(), m, k, alt_kinds: Vec::new(), naive: false }
}

impl Suite {
    pub fn entries(self) -> Vec<SuiteEntry> {
        match self {
            Suite::FalseAlarm => ["ce_pred", "ce_pred_xtilde", "tc_pred", "tc_pred_xtilde"]
                .iter()
                .flat_map(|n| [50, 100, 200].map(|m| entry(n, m, 4.0)))
                .collect(),
            Suite::ShiftPower => ["big_shift", "big_shift:ewaf", "small_shift", "small_shift:ewaf"]
                .iter()
                .map(|n| entry(n, 200, 4.0))
                .collect(),
            Suite::Trust => ["symmetric_shift", "highrisk_shift"]
                .iter()
                .flat_map(|s| ["none", "calibrated", "over"].map(|l| entry(&format!("{s}:{l}"), 200, 4.0)))
                .collect(),
            Suite::TcViolation => ["never", "300", "100"].iter().map(|o| entry(&format!("tc_violation:{o}"), 100, 6.0)).collect(),
            Suite::Retrain => vec![SuiteEntry {
                alt_kinds: vec![("logit_shift".to_string(), ModelKind::LogitShift)],
                ..entry("retrain_null_highdim", 100, 4.0)
            }],
            Suite::Naive => vec![SuiteEntry { naive: true, ..entry("naive_baseline", 100, 4.0) }],
        }
    }
}
