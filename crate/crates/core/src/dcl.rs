//! Dynamic control limits from a parametric-bootstrap ensemble.
//!
//! Each bootstrap sequence resamples outcomes from the current nuisance
//! estimate and tracks
//!
//! ```text
//! Φ_b(t) = Σ_{i≤t} ∇_δ log p*(i) + Σ_{i≤t} V(i) Λ⁻¹(s(i)−1) Σ_{j<s(i)} ∇_θ log p*(j)
//! ```
//!
//! where `s(i)` is the first index of the batch holding `i` (the estimate
//! used to score `i` was fitted through `s(i) − 1`). The bootstrap chart is
//! the CUSUM of `Φ_b` over batch boundaries. After each batch the limit is
//! placed so that the number of surviving sequences above it matches the
//! alpha-spending increment; those sequences are eliminated for good.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chart::{cusum_over_prefixes, Norm};
use crate::linalg::{cholesky_with_jitter, dot, Matrix};
use crate::models::{cross_info, delta_score_weight, info_theta, sigmoid, ModelKind, ShiftCoords, PROB_CLAMP};
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

/// Minimum number of sequences at or above the limit (eliminated now or
/// earlier) before B is considered adequate.
pub const MIN_EXCEEDANCES: usize = 5;

/// An alpha-spending rule `α(v)` on relative time `v = t/m ∈ [1, K]`.
pub trait AlphaSpending {
    fn spend(&self, v: f64) -> Result<f64>;
}

/// Linear spending `α_total · (v − 1)/(K − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpendingFunction {
    pub alpha_total: f64,
    pub k: f64,
}

impl SpendingFunction {
    pub fn new(alpha_total: f64, k: f64) -> Result<Self> {
        if !(alpha_total > 0.0 && alpha_total < 1.0) {
            return Err(Error::OutOfRange(alloc::format!("alpha {alpha_total} not in (0,1)")));
        }
        if !(k > 1.0) || !k.is_finite() {
            return Err(Error::OutOfRange(alloc::format!("K {k} must exceed 1")));
        }
        Ok(Self { alpha_total, k })
    }
}

impl AlphaSpending for SpendingFunction {
    fn spend(&self, v: f64) -> Result<f64> {
        alpha_spend(self, v)
    }
}

pub fn alpha_spend(sf: &SpendingFunction, v: f64) -> Result<f64> {
    // Tolerate rounding at the endpoints.
    let eps = 1e-12 * sf.k;
    if !(v >= 1.0 - eps && v <= sf.k + eps) {
        return Err(Error::OutOfRange(alloc::format!("relative time {v} outside [1, {}]", sf.k)));
    }
    Ok(sf.alpha_total * ((v - 1.0) / (sf.k - 1.0)).clamp(0.0, 1.0))
}

/// Draws `Y* ~ Bern(σ(θᵀz))` with the probability clamped away from 0 and 1.
pub fn resample_outcome<R: Rng + ?Sized>(z: &[f64], theta: &[f64], rng: &mut R) -> u8 {
    let p = sigmoid(dot(theta, z)).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    u8::from(rng::bernoulli(rng, p))
}

/// Observed-data information used by the correction term.
#[derive(Debug, Clone)]
pub struct InformationEstimates {
    /// `Σ_j info_theta(θ̂_{j−1}, z_j)` over all observations seen so far.
    pub lambda_cum: Matrix,
    /// Number of times ridge jitter was needed to invert `lambda_cum`.
    pub jitter_events: usize,
}

impl InformationEstimates {
    pub fn new(q: usize) -> Self {
        Self { lambda_cum: Matrix::zeros(q, q), jitter_events: 0 }
    }

    pub fn add(&mut self, theta: &[f64], z: &[f64]) -> Result<()> {
        let info = info_theta(theta, z)?;
        self.lambda_cum.add_assign(&info);
        Ok(())
    }

    /// `(Σ_{i∈batch} V(i)) · Λ_cum⁻¹`, the `d × q` matrix applied to each
    /// sequence's θ-score sum for a batch.
    pub fn batch_correction(
        &mut self,
        theta: &[f64],
        batch_zs: &[&[f64]],
        kind: ModelKind,
        coords: &ShiftCoords,
    ) -> Result<Matrix> {
        let q = theta.len();
        let mut v_sum = Matrix::zeros(coords.len(), q);
        for z in batch_zs {
            v_sum.add_assign(&cross_info(theta, z, kind, coords)?);
        }
        let (chol, jittered) = cholesky_with_jitter(&self.lambda_cum)
            .ok_or(Error::EstimationFailed(f64::NAN))?;
        if jittered {
            self.jitter_events += 1;
        }
        Ok(v_sum.matmul(&chol.inverse()))
    }
}

/// How bootstrap outcomes and scores are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleMode {
    /// Resample at a fixed known parameter; the bootstrap chart is the plain
    /// CUSUM of δ-scores.
    Known(Vec<f64>),
    /// Resample at the running estimate and add the φ correction term.
    Plugin,
}

#[derive(Debug, Clone)]
struct BootstrapSequence {
    id: usize,
    rng: StreamRng,
    /// Σ_j ∇_θ log p* over all resampled indices so far.
    theta_sum: Vec<f64>,
    /// Snapshot of `theta_sum` at the start of the current batch.
    theta_sum_at_batch_start: Vec<f64>,
    /// Running Φ_b.
    phi: Vec<f64>,
    /// Φ_b at batch boundaries (flat, `d` per row).
    phi_prefix: Vec<f64>,
    stat: f64,
}

/// Outcome of a control-limit update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLimit {
    /// Alarm threshold; `+∞` when nothing was spent, `−∞` when every
    /// survivor was eliminated.
    pub h: f64,
    pub eliminated: usize,
    pub survivors_after: usize,
}

/// Parametric-bootstrap ensemble with its survivor set.
#[derive(Debug, Clone)]
pub struct BootstrapEnsemble {
    b_total: usize,
    mode: EnsembleMode,
    kind: ModelKind,
    coords: ShiftCoords,
    norm: Norm,
    q: usize,
    seqs: Vec<BootstrapSequence>,
    eliminated: usize,
    carry: f64,
    /// Cumulative alpha targeted so far.
    pub spent_alpha: f64,
    /// Batches after which fewer than [`MIN_EXCEEDANCES`] sequences had
    /// exceeded the limit in total.
    pub adequacy_warnings: usize,
    scratch_ds: [Vec<f64>; 2],
    scratch_ts: [Vec<f64>; 2],
}

impl BootstrapEnsemble {
    pub fn new(
        b_total: usize,
        master_seed: u64,
        mode: EnsembleMode,
        kind: ModelKind,
        coords: ShiftCoords,
        norm: Norm,
        q: usize,
    ) -> Self {
        let d = coords.len();
        let seqs = (0..b_total)
            .map(|id| BootstrapSequence {
                id,
                rng: sequence_rng(master_seed, id),
                theta_sum: vec![0.0; q],
                theta_sum_at_batch_start: vec![0.0; q],
                phi: vec![0.0; d],
                phi_prefix: Vec::new(),
                stat: 0.0,
            })
            .collect();
        Self {
            b_total,
            mode,
            kind,
            coords,
            norm,
            q,
            seqs,
            eliminated: 0,
            carry: 0.0,
            spent_alpha: 0.0,
            adequacy_warnings: 0,
            scratch_ds: [vec![0.0; d], vec![0.0; d]],
            scratch_ts: [vec![0.0; q], vec![0.0; q]],
        }
    }

    pub fn b_total(&self) -> usize {
        self.b_total
    }

    pub fn survivors(&self) -> usize {
        self.seqs.len()
    }

    pub fn survivor_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.seqs.iter().map(|s| s.id)
    }

    pub fn eliminated(&self) -> usize {
        self.eliminated
    }

    /// Current bootstrap chart statistics, one per survivor, paired with ids.
    pub fn stats(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.seqs.iter().map(|s| (s.id, s.stat))
    }

    /// Resamples the non-contamination window at `theta` so that the
    /// θ-score sums include indices `1..=m`. No-op in known mode.
    pub fn init_noncontamination(&mut self, zs: &[&[f64]], theta: &[f64]) {
        if matches!(self.mode, EnsembleMode::Known(_)) {
            return;
        }
        for z in zs {
            let mu = sigmoid(dot(theta, z)).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            for y in 0..2 {
                let r = y as f64 - mu;
                for (o, zi) in self.scratch_ts[y].iter_mut().zip(z.iter()) {
                    *o = r * zi;
                }
            }
            for seq in &mut self.seqs {
                let y = usize::from(rng::bernoulli(&mut seq.rng, mu));
                for (a, b) in seq.theta_sum.iter_mut().zip(&self.scratch_ts[y]) {
                    *a += b;
                }
            }
        }
    }

    /// Starts a batch: adds `correction · Σθ*` to each survivor's Φ, where
    /// `correction` is `(Σ_{i∈batch} V(i)) Λ⁻¹` from the observed data.
    pub fn begin_batch(&mut self, correction: Option<&Matrix>) {
        let d = self.coords.len();
        let mut tmp = vec![0.0; d];
        for seq in &mut self.seqs {
            seq.theta_sum_at_batch_start.copy_from_slice(&seq.theta_sum);
            if let Some(w) = correction {
                w.mul_vec_into(&seq.theta_sum, &mut tmp);
                for (p, c) in seq.phi.iter_mut().zip(&tmp) {
                    *p += c;
                }
            }
        }
    }

    /// Resamples one observation for every survivor and extends its score
    /// sums. `theta_prev` is the estimate fitted before this observation.
    pub fn step_ensemble(&mut self, z: &[f64], theta_prev: &[f64]) -> Result<()> {
        if self.seqs.is_empty() {
            return Ok(());
        }
        let theta = match &self.mode {
            EnsembleMode::Known(t0) => t0.as_slice(),
            EnsembleMode::Plugin => theta_prev,
        };
        let mu_raw = sigmoid(dot(theta, z));
        let mu = mu_raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let plugin = matches!(self.mode, EnsembleMode::Plugin);
        for y in 0..2usize {
            let w = delta_score_weight(self.kind, mu_raw, y as f64)?;
            for (o, &c) in self.scratch_ds[y].iter_mut().zip(self.coords.as_slice()) {
                *o = w * z[c];
            }
            if plugin {
                let r = y as f64 - mu_raw;
                for (o, zi) in self.scratch_ts[y].iter_mut().zip(z) {
                    *o = r * zi;
                }
            }
        }
        for seq in &mut self.seqs {
            let y = usize::from(rng::bernoulli(&mut seq.rng, mu));
            for (a, b) in seq.phi.iter_mut().zip(&self.scratch_ds[y]) {
                *a += b;
            }
            if plugin {
                for (a, b) in seq.theta_sum.iter_mut().zip(&self.scratch_ts[y]) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    /// Records a batch boundary and recomputes each survivor's chart
    /// statistic `C*_b = max_{t'} φ(t', t)`.
    pub fn close_batch(&mut self) {
        let d = self.coords.len();
        let norm = self.norm;
        for seq in &mut self.seqs {
            seq.phi_prefix.extend_from_slice(&seq.phi);
            seq.stat = cusum_over_prefixes(&seq.phi_prefix, d, &seq.phi, norm);
        }
    }

    /// Places the limit for a batch whose spending increment is
    /// `spend_increment`, eliminating the survivors above it.
    pub fn update_control_limit(&mut self, spend_increment: f64) -> Result<ControlLimit> {
        self.spent_alpha += spend_increment;
        let target = self.b_total as f64 * spend_increment + self.carry;
        let n = libm::floor(target + 0.5).max(0.0) as usize;
        self.carry = target - n as f64;
        let available = self.seqs.len();
        if n > available {
            return Err(Error::SpendExhausted { wanted: n, available });
        }
        if self.eliminated + n < MIN_EXCEEDANCES {
            self.adequacy_warnings += 1;
        }
        let h = if n == 0 {
            f64::INFINITY
        } else if n == available {
            f64::NEG_INFINITY
        } else {
            // Order by statistic descending, ties by id ascending; the first
            // n are eliminated and h is the (n+1)-th largest statistic.
            self.seqs.sort_by(|a, b| b.stat.total_cmp(&a.stat).then(a.id.cmp(&b.id)));
            let h = self.seqs[n].stat;
            self.seqs.drain(..n);
            self.seqs.sort_by_key(|s| s.id);
            h
        };
        if n == available {
            self.seqs.clear();
        }
        self.eliminated += n;
        Ok(ControlLimit { h, eliminated: n, survivors_after: self.seqs.len() })
    }

    /// Statistic `‖Φ_b(t) − Φ_b(boundary)‖` for survivor `id`, where
    /// `boundary` indexes a recorded batch end (`None` means the start of
    /// monitoring). Returns `None` for eliminated ids.
    pub fn phi_stat(&self, id: usize, boundary: Option<usize>) -> Option<f64> {
        let d = self.coords.len();
        let seq = self.seqs.iter().find(|s| s.id == id)?;
        let base: Vec<f64> = match boundary {
            None => vec![0.0; d],
            Some(k) => seq.phi_prefix[k * d..(k + 1) * d].to_vec(),
        };
        let diff: Vec<f64> = seq.phi.iter().zip(&base).map(|(a, b)| a - b).collect();
        Some(self.norm.apply(&diff))
    }

    pub fn q(&self) -> usize {
        self.q
    }
}

/// The RNG stream of bootstrap sequence `id`.
pub fn sequence_rng(master_seed: u64, id: usize) -> StreamRng {
    rng::substream(master_seed, rng::tag::BOOTSTRAP, id as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::ScorePrefix;
    use crate::models::{score_delta, score_theta};

    #[test]
    fn linear_spending_values() {
        let sf = SpendingFunction::new(0.1, 4.0).unwrap();
        assert_eq!(alpha_spend(&sf, 1.0).unwrap(), 0.0);
        assert!((alpha_spend(&sf, 4.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((alpha_spend(&sf, 2.5).unwrap() - 0.05).abs() < 1e-15);
        assert!(alpha_spend(&sf, 0.5).is_err());
        assert!(alpha_spend(&sf, 4.5).is_err());
        assert!(SpendingFunction::new(1.5, 4.0).is_err());
        assert!(SpendingFunction::new(0.1, 1.0).is_err());
    }

    #[test]
    fn resample_boundaries_and_symmetry() {
        let mut r = rng::substream(1, 0, 0);
        let ones: usize = (0..1000).map(|_| usize::from(resample_outcome(&[1.0], &[-1e6], &mut r))).sum();
        assert_eq!(ones, 0);
        let n = 100_000;
        let ones: usize = (0..n).map(|_| usize::from(resample_outcome(&[1.0], &[0.0], &mut r))).sum();
        let mean = ones as f64 / n as f64;
        assert!((mean - 0.5).abs() < 3.0 * libm::sqrt(0.25 / n as f64));
        let a: Vec<u8> = {
            let mut r = sequence_rng(9, 3);
            (0..50).map(|_| resample_outcome(&[0.3, 1.0], &[1.0, -0.2], &mut r)).collect()
        };
        let b: Vec<u8> = {
            let mut r = sequence_rng(9, 3);
            (0..50).map(|_| resample_outcome(&[0.3, 1.0], &[1.0, -0.2], &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    fn ensemble_with_stats(stats: &[f64]) -> BootstrapEnsemble {
        let mut e = BootstrapEnsemble::new(
            stats.len(),
            0,
            EnsembleMode::Known(vec![0.0]),
            ModelKind::LogitShift,
            ShiftCoords::full(1),
            Norm::L1,
            1,
        );
        for (seq, &s) in e.seqs.iter_mut().zip(stats) {
            seq.stat = s;
        }
        e
    }

    #[test]
    fn zero_spend_gives_infinite_limit() {
        let mut e = ensemble_with_stats(&[1.0, 2.0, 3.0]);
        let cl = e.update_control_limit(0.0).unwrap();
        assert_eq!(cl.h, f64::INFINITY);
        assert_eq!(cl.eliminated, 0);
        assert_eq!(e.survivors(), 3);
    }

    #[test]
    fn order_statistic_limit() {
        let stats: Vec<f64> = (1..=10).map(f64::from).collect();
        let mut e = ensemble_with_stats(&stats);
        let cl = e.update_control_limit(0.2).unwrap();
        assert!(cl.h >= 8.0 && cl.h < 9.0);
        assert_eq!(cl.eliminated, 2);
        let left: Vec<usize> = e.survivor_ids().collect();
        assert_eq!(left, (0..8).collect::<Vec<_>>());
        assert!(e.stats().all(|(_, s)| s <= cl.h));
    }

    #[test]
    fn ties_broken_by_id() {
        let mut e = ensemble_with_stats(&[5.0, 5.0, 5.0, 1.0]);
        let cl = e.update_control_limit(0.25).unwrap();
        assert_eq!(cl.eliminated, 1);
        assert_eq!(e.survivor_ids().collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(cl.h, 5.0);
    }

    #[test]
    fn over_spend_errors() {
        let mut e = ensemble_with_stats(&[1.0, 2.0]);
        assert!(matches!(e.update_control_limit(2.0), Err(Error::SpendExhausted { .. })));
    }

    #[test]
    fn adequacy_counts_all_exceedances_so_far() {
        let stats: Vec<f64> = (1..=10).map(f64::from).collect();
        let mut e = ensemble_with_stats(&stats);
        // Two eliminations per call: totals 2, 4, 6.
        for _ in 0..3 {
            e.update_control_limit(0.2).unwrap();
        }
        assert_eq!(e.adequacy_warnings, 2);
    }

    #[test]
    fn spend_accounting_over_a_null_run() {
        // Known-mode ensemble on a stationary stream with B = 200.
        let sf = SpendingFunction::new(0.1, 4.0).unwrap();
        let m = 50usize;
        let b = 200;
        let mut e = BootstrapEnsemble::new(
            b,
            7,
            EnsembleMode::Known(vec![0.5, -0.2]),
            ModelKind::LogitShift,
            ShiftCoords::full(2),
            Norm::L1,
            2,
        );
        let mut rng = rng::substream(8, 0, 0);
        let mut prev = m;
        let horizon = 200;
        let mut t = m;
        while t < horizon {
            let end = (t + 10).min(horizon);
            e.begin_batch(None);
            for _ in t..end {
                let z = [rng::uniform_pm1(&mut rng), 1.0];
                e.step_ensemble(&z, &[0.0, 0.0]).unwrap();
            }
            e.close_batch();
            let inc = alpha_spend(&sf, end as f64 / m as f64).unwrap() - alpha_spend(&sf, prev as f64 / m as f64).unwrap();
            let survivors_before = e.survivors();
            let cl = e.update_control_limit(inc).unwrap();
            assert_eq!(survivors_before - cl.survivors_after, cl.eliminated);
            let frac = e.eliminated() as f64 / b as f64;
            let target = alpha_spend(&sf, end as f64 / m as f64).unwrap();
            assert!((frac - target).abs() <= 1.0 / b as f64 + 1e-12, "t={end}: {frac} vs {target}");
            prev = end;
            t = end;
        }
        assert!((e.eliminated() as f64 / b as f64 - 0.1).abs() <= 1.0 / b as f64);
    }

    #[test]
    fn empty_ensemble_step_is_noop() {
        let mut e = ensemble_with_stats(&[1.0]);
        e.update_control_limit(1.0).unwrap();
        assert_eq!(e.survivors(), 0);
        e.step_ensemble(&[1.0], &[0.0]).unwrap();
        e.close_batch();
    }

    #[test]
    fn known_mode_chart_is_plain_cusum_of_bootstrap_scores() {
        let theta0 = [0.4, -0.1];
        let coords = ShiftCoords::full(2);
        let mut e = BootstrapEnsemble::new(1, 21, EnsembleMode::Known(theta0.to_vec()), ModelKind::RiskShift, coords.clone(), Norm::L1, 2);
        let mut rz = rng::substream(22, 0, 0);
        let zs: Vec<[f64; 2]> = (0..30).map(|_| [rng::uniform_pm1(&mut rz), 1.0]).collect();
        let mut replay = sequence_rng(21, 0);
        let mut prefix = ScorePrefix::new(1, 2);
        for batch in zs.chunks(10) {
            e.begin_batch(None);
            let mut bsum = [0.0; 2];
            for z in batch {
                // The θ argument is ignored in known mode.
                e.step_ensemble(z, &[9.0, 9.0]).unwrap();
                let y = resample_outcome(z, &theta0, &mut replay);
                let s = score_delta(&theta0, z, y, ModelKind::RiskShift, &coords).unwrap();
                bsum[0] += s[0];
                bsum[1] += s[1];
            }
            prefix.append_score(&bsum).unwrap();
            e.close_batch();
        }
        let want = prefix.cusum_stat(Norm::L1).unwrap();
        let got = e.stats().next().unwrap().1;
        assert!((got - want).abs() < 1e-12 * want.max(1.0));
    }

    // Hand-rolled oracle for Φ with the correction term: one sequence, three
    // batches, q = 2, d = 1.
    #[test]
    fn plugin_phi_matches_direct_arithmetic() {
        let kind = ModelKind::LogitShift;
        let coords = ShiftCoords::new(vec![0], 2).unwrap();
        let seed = 5;
        let m = 6;
        let mut rz = rng::substream(6, 0, 0);
        let zs: Vec<[f64; 2]> = (0..m + 9).map(|_| [2.0 * rng::uniform_pm1(&mut rz), 1.0]).collect();
        // A different estimate per batch, as the monitor would supply.
        let thetas = [[0.8, -0.3], [0.7, -0.25], [0.75, -0.2], [0.9, -0.1]];
        let mut e = BootstrapEnsemble::new(1, seed, EnsembleMode::Plugin, kind, coords.clone(), Norm::L1, 2);
        let mut info = InformationEstimates::new(2);
        let init: Vec<&[f64]> = zs[..m].iter().map(|z| z.as_slice()).collect();
        e.init_noncontamination(&init, &thetas[0]);
        for z in &zs[..m] {
            info.add(&thetas[0], z).unwrap();
        }
        for (bi, batch) in zs[m..].chunks(3).enumerate() {
            let th = &thetas[bi + 1];
            let bz: Vec<&[f64]> = batch.iter().map(|z| z.as_slice()).collect();
            let corr = info.batch_correction(th, &bz, kind, &coords).unwrap();
            e.begin_batch(Some(&corr));
            for z in batch {
                e.step_ensemble(z, th).unwrap();
                info.add(th, z).unwrap();
            }
            e.close_batch();
        }

        // Oracle: replay the draws and build both terms explicitly.
        let mut r = sequence_rng(seed, 0);
        let mut theta_sum = [0.0f64; 2];
        let mut lambda = [[0.0f64; 2]; 2];
        let accumulate_info = |lambda: &mut [[f64; 2]; 2], th: &[f64; 2], z: &[f64; 2]| {
            let mu = sigmoid(th[0] * z[0] + th[1] * z[1]);
            for a in 0..2 {
                for b in 0..2 {
                    lambda[a][b] += mu * (1.0 - mu) * z[a] * z[b];
                }
            }
        };
        for z in &zs[..m] {
            let y = resample_outcome(z, &thetas[0], &mut r);
            let s = score_theta(&thetas[0], z, y).unwrap();
            theta_sum[0] += s[0];
            theta_sum[1] += s[1];
            accumulate_info(&mut lambda, &thetas[0], z);
        }
        let mut phi_bounds = vec![0.0f64];
        let mut phi = 0.0f64;
        for (bi, batch) in zs[m..].chunks(3).enumerate() {
            let th = &thetas[bi + 1];
            let det = lambda[0][0] * lambda[1][1] - lambda[0][1] * lambda[1][0];
            let inv = [[lambda[1][1] / det, -lambda[0][1] / det], [-lambda[1][0] / det, lambda[0][0] / det]];
            let start_sum = theta_sum;
            for z in batch {
                let mu = sigmoid(th[0] * z[0] + th[1] * z[1]);
                let v = [-mu * (1.0 - mu) * z[0] * z[0], -mu * (1.0 - mu) * z[0] * z[1]];
                let vl = [v[0] * inv[0][0] + v[1] * inv[1][0], v[0] * inv[0][1] + v[1] * inv[1][1]];
                phi += vl[0] * start_sum[0] + vl[1] * start_sum[1];
                let y = resample_outcome(z, th, &mut r);
                phi += score_delta(th, z, y, kind, &coords).unwrap()[0];
                let s = score_theta(th, z, y).unwrap();
                theta_sum[0] += s[0];
                theta_sum[1] += s[1];
            }
            for z in batch {
                accumulate_info(&mut lambda, th, z);
            }
            phi_bounds.push(phi);
        }
        let want = phi_bounds[..3].iter().map(|b| (phi - b).abs()).fold(0.0, f64::max);
        let got = e.stats().next().unwrap().1;
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-12), "{got} vs {want}");
        // phi_stat against the first boundary.
        let s1 = e.phi_stat(0, Some(0)).unwrap();
        assert!((s1 - (phi - phi_bounds[1]).abs()).abs() < 1e-10);
    }

    #[test]
    fn zero_correction_reduces_to_plain_cusum() {
        let kind = ModelKind::LogitShift;
        let coords = ShiftCoords::full(2);
        let theta = [0.3, 0.1];
        let mut a = BootstrapEnsemble::new(3, 2, EnsembleMode::Plugin, kind, coords.clone(), Norm::L1, 2);
        let mut b = BootstrapEnsemble::new(3, 2, EnsembleMode::Known(theta.to_vec()), kind, coords, Norm::L1, 2);
        let mut rz = rng::substream(3, 0, 0);
        let zero = Matrix::zeros(2, 2);
        for _ in 0..4 {
            a.begin_batch(Some(&zero));
            b.begin_batch(None);
            for _ in 0..10 {
                let z = [rng::uniform_pm1(&mut rz), 1.0];
                a.step_ensemble(&z, &theta).unwrap();
                b.step_ensemble(&z, &theta).unwrap();
            }
            a.close_batch();
            b.close_batch();
        }
        for ((_, x), (_, y)) in a.stats().zip(b.stats()) {
            assert_eq!(x, y);
        }
    }
}
