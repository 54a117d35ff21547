//! Command-line interface.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use cmi_cusum_core::chart::Norm;
use cmi_cusum_core::experiments::{replicate_seed, ExperimentReport};
use cmi_cusum_core::models::ModelKind;
use cmi_cusum_core::monitor::{run_monitor, Conditioning, Diagnostics, MonitorConfig, PredictionScale, TraceRow};
use cmi_cusum_core::simgen::{simulate, ScenarioConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    horizon_params, resolve_monitor, resolve_scenario, MonitorOverrides, RunConfigFile, ThetaModeFlag,
    DEFAULT_REPLICATES, DEFAULT_SEED,
};
use crate::error::{AppError, AppResult};
use crate::formats::{self, RunLabel};
use crate::runner::{self, Experiment, Suite};

const DEFAULT_M: usize = 100;
const DEFAULT_K: f64 = 4.0;

#[derive(Debug, Parser)]
#[command(name = "cmi-cusum", version, about = "Score-based CUSUM monitoring of clinical risk models under confounding medical interventions")]
pub struct Cli {
    /// Raise log verbosity (-v info, -vv debug). `RUST_LOG` also works.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate patient streams and write them as CSV.
    Simulate(CommonArgs),
    /// Monitor one stream, read from CSV or freshly simulated.
    Monitor(MonitorArgs),
    /// Run replicated experiments and write per-replicate CSV and a JSON summary.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormArg {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ThetaModeArg {
    Known,
    Plugin,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConditioningArg {
    Pred,
    #[value(name = "pred+xt")]
    PredXt,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    /// Shift on the log-odds scale.
    Logit,
    /// Shift on the risk scale.
    Risk,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    Logit,
    Probability,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Catalog scenario, e.g. `ce_pred`, `big_shift:ewaf`, `tc_violation:100`.
    #[arg(long, value_name = "NAME")]
    pub scenario: Option<String>,
    /// JSON run configuration.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Total false-alarm probability.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Non-contamination window length.
    #[arg(long)]
    pub m: Option<usize>,
    /// Horizon multiple; monitoring stops after ⌊mK⌋ patients.
    #[arg(long = "K", value_name = "K")]
    pub k: Option<f64>,
    /// Bootstrap sequences.
    #[arg(long = "B", value_name = "B")]
    pub b: Option<usize>,
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub norm: Option<NormArg>,
    #[arg(long, value_enum)]
    pub theta_mode: Option<ThetaModeArg>,
    #[arg(long, value_enum)]
    pub conditioning: Option<ConditioningArg>,
    /// Monitoring model; defaults to the scenario's.
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Scale of the prediction in the monitoring model.
    #[arg(long, value_enum)]
    pub prediction_scale: Option<ScaleArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub replicates: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Include the unmeasured confounder `u` in stream files.
    #[arg(long)]
    pub emit_confounder: bool,
    /// Worker threads for replicates.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct MonitorArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Stream CSV to monitor instead of simulating one.
    #[arg(long, value_name = "FILE")]
    pub stream: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Run a catalog suite instead of a single scenario.
    #[arg(long, value_enum, conflicts_with = "scenario")]
    pub suite: Option<Suite>,
    /// Also run the naive misclassification chart.
    #[arg(long)]
    pub naive: bool,
    /// Write the chart trace of every replicate under `traces/`.
    #[arg(long)]
    pub traces: bool,
}

/// Settings shared by all subcommands after layering file and flags.
struct Context {
    file: Option<RunConfigFile>,
    overrides: MonitorOverrides,
    seed: u64,
    replicates: Option<usize>,
    out: PathBuf,
    jobs: Option<usize>,
    emit_confounder: bool,
}

impl Context {
    fn new(a: &CommonArgs) -> AppResult<Self> {
        let file = a.config.as_deref().map(RunConfigFile::load).transpose()?;
        let exp = file.as_ref().map(|f| f.experiment.clone()).unwrap_or_default();
        let overrides = MonitorOverrides {
            alpha: a.alpha,
            m: a.m,
            k: a.k,
            b: a.b,
            batch_size: a.batch_size,
            norm: a.norm.map(|n| match n {
                NormArg::L1 => Norm::L1,
                NormArg::L2 => Norm::L2,
            }),
            theta_mode: a.theta_mode.map(|t| match t {
                ThetaModeArg::Known => ThetaModeFlag::Known,
                ThetaModeArg::Plugin => ThetaModeFlag::Plugin,
            }),
            conditioning: a.conditioning.map(|c| match c {
                ConditioningArg::Pred => Conditioning::PredictionOnly,
                ConditioningArg::PredXt => Conditioning::PredictionPlusCovariates,
            }),
            kind: a.model.map(|k| match k {
                ModelArg::Logit => ModelKind::LogitShift,
                ModelArg::Risk => ModelKind::RiskShift,
            }),
            scale: a.prediction_scale.map(|s| match s {
                ScaleArg::Logit => PredictionScale::Logit,
                ScaleArg::Probability => PredictionScale::Probability,
            }),
        };
        Ok(Self {
            seed: a.seed.or(exp.seed).unwrap_or(DEFAULT_SEED),
            replicates: a.replicates.or(exp.n_replicates),
            out: a.out.clone().or(exp.out).unwrap_or_else(|| PathBuf::from("out")),
            jobs: a.jobs.or(exp.jobs),
            emit_confounder: a.emit_confounder || exp.emit_confounder.unwrap_or(false),
            file,
            overrides,
        })
    }

    fn params(&self, m: usize, k: f64) -> AppResult<(usize, f64)> {
        horizon_params(self.file.as_ref(), &self.overrides, m, k)
    }

    fn scenario(&self, name: Option<&str>) -> AppResult<ScenarioConfig> {
        let (m, k) = self.params(DEFAULT_M, DEFAULT_K)?;
        resolve_scenario(self.file.as_ref(), name, m, k)
    }

    fn monitor(&self, scenario: &ScenarioConfig, ov: &MonitorOverrides, m: usize, k: f64) -> AppResult<MonitorConfig> {
        let base = scenario.suggested_monitor(MonitorConfig { m, k, ..MonitorConfig::default() });
        resolve_monitor(base, self.file.as_ref(), ov)
    }

    fn has_scenario(&self, name: Option<&str>) -> bool {
        name.is_some() || self.file.as_ref().is_some_and(|f| f.scenario.is_some())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn run(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Monitor(a) => cmd_monitor(&a),
        Command::Experiment(a) => cmd_experiment(&a),
    }
}

fn cmd_simulate(a: &CommonArgs) -> AppResult<()> {
    let ctx = Context::new(a)?;
    let sc = ctx.scenario(a.scenario.as_deref())?;
    let n = ctx.replicates.unwrap_or(1);
    let pool = runner::thread_pool(ctx.jobs)?;
    let sims = pool.install(|| {
        (0..n).into_par_iter().map(|r| simulate(&sc, replicate_seed(ctx.seed, r))).collect::<Result<Vec<_>, _>>()
    })?;
    formats::write_json(&ctx.path("scenario.json"), &sc)?;
    for (r, sim) in sims.iter().enumerate() {
        let name = if n == 1 { "stream.csv".to_string() } else { format!("stream_{r:04}.csv") };
        let path = formats::write_csv(&ctx.path(&name), |w| formats::write_stream(w, &sim.records, sc.p, ctx.emit_confounder))?;
        println!("{}: {} patients, {} monitored", path.display(), sim.records.len(), sim.monitored);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct MonitorSummary<'a> {
    scenario: Option<&'a str>,
    stream: Option<&'a Path>,
    seed: u64,
    alarm: Option<usize>,
    alarm_time_abs: Option<usize>,
    kappa: Option<usize>,
    horizon: usize,
    final_theta_hat: &'a [f64],
    diagnostics: &'a Diagnostics,
    monitor: &'a MonitorConfig,
}

fn cmd_monitor(a: &MonitorArgs) -> AppResult<()> {
    let ctx = Context::new(&a.common)?;
    let name = a.common.scenario.as_deref();
    let (m, k) = ctx.params(DEFAULT_M, DEFAULT_K)?;
    let scenario = if a.stream.is_none() || ctx.has_scenario(name) { Some(ctx.scenario(name)?) } else { None };
    let mc = match &scenario {
        Some(sc) => ctx.monitor(sc, &ctx.overrides, m, k)?,
        None => resolve_monitor(MonitorConfig { m, k, ..MonitorConfig::default() }, ctx.file.as_ref(), &ctx.overrides)?,
    };
    let (trace, alarm, alarm_abs, theta, diag) = match &a.stream {
        Some(path) => {
            let f = File::open(path).map_err(|e| AppError::io(path, e))?;
            let rows = formats::read_stream(BufReader::new(f), path)?;
            let (obs, times) = formats::stream_observations(&rows, mc.conditioning, mc.scale(), path)?;
            let cfg = MonitorConfig { master_seed: runner::single_run_seeds(ctx.seed).1, ..mc.clone() };
            let res = run_monitor(&cfg, &obs)?;
            let abs = res.alarm_time.map(|t| times[t - 1]);
            (res.trace, res.alarm_time, abs, res.final_theta_hat, res.diagnostics)
        }
        None => {
            let sc = scenario.as_ref().expect("scenario resolved when no stream is given");
            let (sim, res) = runner::single_run(sc, &mc, ctx.seed)?;
            let abs = res.alarm_time.and_then(|t| sim.absolute_time(t));
            (res.trace, res.alarm_time, abs, res.final_theta_hat, res.diagnostics)
        }
    };
    if diag.adequacy_warnings > 0 {
        log::warn!(
            "{} of {} batches eliminated fewer than five bootstrap sequences; a larger B gives a more stable limit",
            diag.adequacy_warnings,
            trace.len()
        );
    }
    if diag.truncated {
        log::warn!("stream ended after {} monitored patients, before the horizon {}", diag.observations_used, mc.horizon());
    }
    formats::write_csv(&ctx.path("trace.csv"), |w| formats::write_trace(w, &trace))?;
    let summary = MonitorSummary {
        scenario: scenario.as_ref().map(|s| s.name.as_str()),
        stream: a.stream.as_deref(),
        seed: ctx.seed,
        alarm,
        alarm_time_abs: alarm_abs,
        kappa: scenario.as_ref().and_then(|s| s.kappa),
        horizon: mc.horizon(),
        final_theta_hat: &theta,
        diagnostics: &diag,
        monitor: &mc,
    };
    formats::write_json(&ctx.path("result.json"), &summary)?;
    match alarm {
        Some(t) => println!("alarm at monitored patient {t} (C = {:.4}, h = {:.4})", last_c(&trace), last_h(&trace)),
        None => println!("no alarm through monitored patient {}", diag.observations_used),
    }
    Ok(())
}

fn last_c(trace: &[TraceRow]) -> f64 {
    trace.last().map_or(f64::NAN, |r| r.c)
}

fn last_h(trace: &[TraceRow]) -> f64 {
    trace.last().map_or(f64::NAN, |r| r.h)
}

fn cmd_experiment(a: &ExperimentArgs) -> AppResult<()> {
    let ctx = Context::new(&a.common)?;
    let n = ctx.replicates.unwrap_or(DEFAULT_REPLICATES);
    let file_naive = ctx.file.as_ref().and_then(|f| f.experiment.naive);
    let naive_for = |wanted: bool| (wanted || a.naive || file_naive.is_some()).then(|| file_naive.unwrap_or_default());
    let mut experiments = Vec::new();
    match a.suite {
        Some(suite) => {
            for e in suite.entries() {
                let (m, k) = ctx.params(e.m, e.k)?;
                let sc = resolve_scenario(None, Some(&e.scenario), m, k)?;
                let mut monitors = vec![("score".to_string(), ctx.monitor(&sc, &ctx.overrides, m, k)?)];
                for (name, kind) in &e.alt_kinds {
                    let ov = MonitorOverrides { kind: Some(*kind), scale: ctx.overrides.scale, ..ctx.overrides.clone() };
                    let sc_kind = ScenarioConfig { monitor_kind: *kind, ..sc.clone() };
                    monitors.push((name.clone(), ctx.monitor(&sc_kind, &ov, m, k)?));
                }
                experiments.push(Experiment { scenario: sc, monitors, naive: naive_for(e.naive) });
            }
        }
        None => {
            let sc = ctx.scenario(a.common.scenario.as_deref())?;
            let (m, k) = ctx.params(DEFAULT_M, DEFAULT_K)?;
            let mc = ctx.monitor(&sc, &ctx.overrides, m, k)?;
            let is_naive = sc.name.split(':').next() == Some("naive_baseline");
            experiments.push(Experiment { scenario: sc, monitors: vec![("score".to_string(), mc)], naive: naive_for(is_naive) });
        }
    }
    let pool = runner::thread_pool(ctx.jobs)?;
    let mut all: Vec<(RunLabel, ExperimentReport)> = Vec::new();
    for exp in &experiments {
        let t0 = Instant::now();
        let reports = exp.run(&pool, n, ctx.seed);
        log::info!("{} (m={}, K={}): {} replicates in {:.1?}", exp.scenario.name, exp.m(), exp.k(), n, t0.elapsed());
        all.extend(reports);
    }
    formats::write_csv(&ctx.path("replicates.csv"), |w| {
        formats::write_replicates(w, all.iter().map(|(l, r)| (l, r.replicates.as_slice())))
    })?;
    let summary: Vec<_> = all.iter().map(|(l, r)| runner::summary_entry(l, r, ctx.seed)).collect();
    formats::write_json(&ctx.path("summary.json"), &summary)?;
    if a.traces {
        write_traces(&ctx, &pool, &experiments, n)?;
    }
    print_table(&all);
    Ok(())
}

fn write_traces(ctx: &Context, pool: &rayon::ThreadPool, experiments: &[Experiment], n: usize) -> AppResult<()> {
    for exp in experiments {
        for (name, mc) in &exp.monitors {
            let traces: Vec<(usize, Option<Vec<TraceRow>>)> = pool.install(|| {
                (0..n)
                    .into_par_iter()
                    .map(|r| {
                        let seed = replicate_seed(ctx.seed, r);
                        let res = simulate(&exp.scenario, seed).and_then(|sim| {
                            let stream = sim.monitor_stream(mc.conditioning, mc.scale())?;
                            let mon = cmi_cusum_core::rng::derive_seed(seed, cmi_cusum_core::rng::tag::MONITOR, 0);
                            run_monitor(&MonitorConfig { master_seed: mon, ..mc.clone() }, &stream)
                        });
                        (r, res.ok().map(|x| x.trace))
                    })
                    .collect()
            });
            let stem = exp.scenario.name.replace(':', "-");
            for (r, trace) in traces {
                if let Some(trace) = trace {
                    let file = format!("traces/{stem}_{name}_m{}_r{r:04}.csv", exp.m());
                    formats::write_csv(&ctx.path(&file), |w| formats::write_trace(w, &trace))?;
                }
            }
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

fn print_table(all: &[(RunLabel, ExperimentReport)]) {
    println!("{:<28} {:<12} {:>5} {:>4} {:>8} {:>8} {:>10} {:>10}", "scenario", "monitor", "m", "K", "fa", "power", "med_alarm", "med_delay");
    for (l, r) in all {
        let med = |q: Option<f64>, finite_exists: bool| match q {
            Some(v) => format!("{v:.0}"),
            None if finite_exists => "inf".to_string(),
            None => "-".to_string(),
        };
        println!(
            "{:<28} {:<12} {:>5} {:>4} {:>8} {:>8} {:>10} {:>10}",
            l.scenario,
            l.monitor,
            l.m,
            l.k,
            fmt_opt(r.metrics.false_alarm_rate),
            fmt_opt(r.metrics.power),
            med(r.metrics.alarm_time.q50, r.n_replicates > r.invalid_count),
            med(r.metrics.delay.q50, r.kappa.is_some() && r.n_replicates > r.invalid_count),
        );
    }
}
