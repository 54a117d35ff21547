use cmi_cusum_core::chart::{Norm, ScorePrefix};
use cmi_cusum_core::dcl::{alpha_spend, BootstrapEnsemble, EnsembleMode, SpendingFunction};
use cmi_cusum_core::experiments::run_replicate;
use cmi_cusum_core::learners::{Learner, LearnerPolicy};
use cmi_cusum_core::models::{
    cross_info, info_theta, log_lik, score_delta, score_theta, sigmoid, ModelKind, ModelParams, Observation,
    ShiftCoords,
};
use cmi_cusum_core::monitor::{run_monitor, MonitorConfig, ThetaMode};
use cmi_cusum_core::rng::{bernoulli, substream, uniform_pm1};
use cmi_cusum_core::simgen::{scenario_catalog, simulate};
use proptest::prelude::*;

const FD_STEP: f64 = 1e-5;
const FD_RTOL: f64 = 1e-4;

fn kind_strategy() -> impl Strategy<Value = ModelKind> {
    prop_oneof![Just(ModelKind::LogitShift), Just(ModelKind::RiskShift)]
}

/// A `(θ, z)` pair with `|θᵀz| ≤ 3`, away from the clamp at 0 and 1.
fn point(q: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-1.0f64..1.0, q), prop::collection::vec(-1.0f64..1.0, q - 1)).prop_map(|(theta, mut z)| {
        z.push(1.0);
        (theta, z)
    })
}

fn close(fd: f64, an: f64, scale: f64) -> bool {
    (fd - an).abs() <= FD_RTOL * scale.max(1e-3)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

fn central<F: Fn(f64) -> f64>(f: F) -> f64 {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

fn bump(v: &[f64], j: usize, h: f64) -> Vec<f64> {
    let mut w = v.to_vec();
    w[j] += h;
    w
}

fn brute_force(scores: &[Vec<f64>], norm: Norm) -> f64 {
    let d = scores[0].len();
    let mut best = 0.0f64;
    for start in 0..scores.len() {
        let mut acc = vec![0.0; d];
        for s in &scores[start..] {
            for (a, b) in acc.iter_mut().zip(s) {
                *a += b;
            }
        }
        best = best.max(norm.apply(&acc));
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_theta_matches_finite_difference((theta, z) in point(3), y in 0u8..2) {
        let an = score_theta(&theta, &z, y).unwrap();
        let params = |t: Vec<f64>| ModelParams::null(t, ModelKind::LogitShift);
        for j in 0..theta.len() {
            let fd = central(|h| log_lik(&params(bump(&theta, j, h)), &z, y, false).unwrap());
            prop_assert!(close(fd, an[j], max_abs(&an)), "j={j} fd={fd} an={}", an[j]);
        }
    }

    #[test]
    fn score_delta_matches_finite_difference((theta, z) in point(3), y in 0u8..2, kind in kind_strategy()) {
        let q = theta.len();
        let an = score_delta(&theta, &z, y, kind, &ShiftCoords::full(q)).unwrap();
        for j in 0..q {
            let fd = central(|h| {
                let delta = bump(&vec![0.0; q], j, h);
                log_lik(&ModelParams::new(theta.clone(), delta, kind).unwrap(), &z, y, true).unwrap()
            });
            prop_assert!(close(fd, an[j], max_abs(&an)), "j={j} fd={fd} an={}", an[j]);
        }
    }

    #[test]
    fn info_theta_matches_finite_difference((theta, z) in point(3), y in 0u8..2) {
        let q = theta.len();
        let an = info_theta(&theta, &z).unwrap();
        for j in 0..q {
            for i in 0..q {
                let fd = -central(|h| score_theta(&bump(&theta, j, h), &z, y).unwrap()[i]);
                prop_assert!(close(fd, an.row(i)[j], max_abs(an.as_slice())));
            }
        }
    }

    #[test]
    fn cross_info_matches_expected_finite_difference((theta, z) in point(3), kind in kind_strategy()) {
        let q = theta.len();
        let coords = ShiftCoords::full(q);
        let an = cross_info(&theta, &z, kind, &coords).unwrap();
        let mu = sigmoid(theta.iter().zip(&z).map(|(a, b)| a * b).sum());
        for j in 0..q {
            for i in 0..q {
                let fd_y = |y: u8| central(|h| score_delta(&bump(&theta, j, h), &z, y, kind, &coords).unwrap()[i]);
                let fd = mu * fd_y(1) + (1.0 - mu) * fd_y(0);
                prop_assert!(close(fd, an.row(i)[j], max_abs(an.as_slice())), "({i},{j}) fd={fd} an={}", an.row(i)[j]);
            }
        }
    }

    #[test]
    fn chart_equals_brute_force_exactly(
        raw in prop::collection::vec(prop::collection::vec(-8i32..=8, 3), 500),
        l2 in any::<bool>(),
    ) {
        // Integer-valued scores keep every partial sum exact.
        let scores: Vec<Vec<f64>> = raw.iter().map(|s| s.iter().map(|&v| f64::from(v)).collect()).collect();
        let norm = if l2 { Norm::L2 } else { Norm::L1 };
        let mut p = ScorePrefix::new(1, 3);
        for s in &scores {
            p.append_score(s).unwrap();
        }
        prop_assert_eq!(p.cusum_stat(norm).unwrap(), brute_force(&scores, norm));
    }

    #[test]
    fn spend_accounting_stays_within_one_sequence(
        alpha in 0.01f64..0.3,
        k in 2.0f64..6.0,
        b in 50usize..400,
        seed in any::<u64>(),
    ) {
        let m = 20usize;
        let sf = SpendingFunction::new(alpha, k).unwrap();
        let theta = vec![0.5, -0.2];
        let mut ens = BootstrapEnsemble::new(
            b, seed, EnsembleMode::Known(theta.clone()), ModelKind::LogitShift, ShiftCoords::full(2), Norm::L1, 2,
        );
        let mut rng = substream(seed, 0, 0);
        let end = (m as f64 * k) as usize;
        let (mut start, mut prev_v) = (m, 1.0);
        while start < end {
            let stop = (start + 5).min(end);
            ens.begin_batch(None);
            for _ in start..stop {
                ens.step_ensemble(&[uniform_pm1(&mut rng), 1.0], &theta).unwrap();
            }
            ens.close_batch();
            let v = (stop as f64 / m as f64).min(k);
            let inc = alpha_spend(&sf, v).unwrap() - alpha_spend(&sf, prev_v).unwrap();
            prev_v = v;
            let cl = ens.update_control_limit(inc.max(0.0)).unwrap();
            let target = alpha_spend(&sf, v).unwrap();
            prop_assert!((ens.eliminated() as f64 / b as f64 - target).abs() <= 1.0 / b as f64 + 1e-12);
            prop_assert!(ens.stats().all(|(_, s)| s <= cl.h));
            start = stop;
        }
    }

    #[test]
    fn ewaf_weights_stay_normalized(
        eta in 0.05f64..2.0,
        seed in any::<u64>(),
    ) {
        let mut rng = substream(seed, 0, 0);
        let pre: Vec<(Vec<f64>, u8)> = (0..60)
            .map(|_| {
                let x = vec![uniform_pm1(&mut rng), uniform_pm1(&mut rng)];
                let y = u8::from(bernoulli(&mut rng, sigmoid(2.0 * x[0])));
                (x, y)
            })
            .collect();
        let policy = LearnerPolicy::Ewaf { windows: vec![10, 20, 0], eta, lambda: 1.0, retrain_every: 7, recalibrate: false };
        let mut learner = Learner::new(&policy, 2, &pre).unwrap();
        for t in 1..=80 {
            let x = vec![uniform_pm1(&mut rng), uniform_pm1(&mut rng)];
            let y = u8::from(bernoulli(&mut rng, sigmoid(2.0 * x[0])));
            let p = learner.predict(&x);
            prop_assert!((0.0..=1.0).contains(&p));
            learner.observe_update(t, &x, y).unwrap();
            let w = learner.ewaf_weights().unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Decisions up to a batch boundary do not change when later data is
    /// removed from the stream.
    #[test]
    fn monitor_is_nonanticipative(seed in any::<u64>(), cut in 0usize..15) {
        let mut rng = substream(seed, 0, 0);
        let stream: Vec<Observation> = (1..=200)
            .map(|t| {
                let x = uniform_pm1(&mut rng) * 3.0;
                let y = u8::from(bernoulli(&mut rng, sigmoid(x - 0.5)));
                Observation::new(t, vec![x, 1.0], y).unwrap()
            })
            .collect();
        let cfg = MonitorConfig { m: 50, k: 4.0, b: 100, master_seed: seed, ..MonitorConfig::default() };
        let full = run_monitor(&cfg, &stream).unwrap();
        let n = 50 + 10 * cut;
        let prefix = run_monitor(&cfg, &stream[..n]).unwrap();
        let shared = full.trace.iter().take_while(|r| r.t <= n).count();
        prop_assert_eq!(&prefix.trace[..shared], &full.trace[..shared]);
        prop_assert!(prefix.diagnostics.max_fit_index.unwrap_or(0) <= n);
    }

    #[test]
    fn monitoring_and_update_streams_are_disjoint(seed in any::<u64>()) {
        let sc = scenario_catalog("small_shift:ewaf", 50, 4.0).unwrap();
        let sim = simulate(&sc, seed).unwrap();
        let mon: std::collections::HashSet<usize> = sim.monitored_records().map(|r| r.t).collect();
        prop_assert!(!sim.learner_update_times.is_empty());
        prop_assert!(sim.learner_update_times.iter().all(|t| !mon.contains(t)));
        for r in sim.monitored_records() {
            prop_assert_eq!(r.a, 0);
        }
    }
}

#[test]
fn null_scores_have_zero_mean() {
    let n = 20_000usize;
    let theta = [0.8, -0.4, 0.3];
    let coords = ShiftCoords::full(3);
    for kind in [ModelKind::LogitShift, ModelKind::RiskShift] {
        let mut rng = substream(11, 0, kind as u64);
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for _ in 0..n {
            let z = [uniform_pm1(&mut rng), uniform_pm1(&mut rng), 1.0];
            let mu = sigmoid(theta.iter().zip(&z).map(|(a, b)| a * b).sum());
            let y = u8::from(bernoulli(&mut rng, mu));
            let s = score_delta(&theta, &z, y, kind, &coords).unwrap();
            for i in 0..3 {
                sum[i] += s[i];
                sq[i] += s[i] * s[i];
            }
        }
        for i in 0..3 {
            let mean = sum[i] / n as f64;
            let se = ((sq[i] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!(mean.abs() <= 3.0 * se, "{kind:?} coord {i}: mean {mean} se {se}");
        }
    }
}

#[test]
fn replicate_replays_bit_exactly() {
    let sc = scenario_catalog("small_shift:ewaf", 50, 4.0).unwrap();
    let mc = sc.suggested_monitor(MonitorConfig { m: 50, k: 4.0, b: 100, ..MonitorConfig::default() });
    let known = MonitorConfig { theta_mode: ThetaMode::Known(vec![1.0, 0.0]), ..mc.clone() };
    let a = run_replicate(&sc, &[mc.clone(), known.clone()], None, 3, 99);
    let b = run_replicate(&sc, &[mc, known], None, 3, 99);
    assert_eq!(a, b);
    assert_eq!(simulate(&sc, 5).unwrap().records, simulate(&sc, 5).unwrap().records);
}
