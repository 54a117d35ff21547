//! Score-based CUSUM chart statistic.
//!
//! For per-step score vectors `s_{m+1}, …, s_t` with prefix sums `S`, the
//! chart is `max_{t'} ‖S_t − S_{t'−1}‖` over candidate changepoints `t'`.
//! A vector-valued CUSUM has no constant-time recursion, so evaluation
//! scans all stored prefixes. When fed per-batch sums the candidates are
//! the batch boundaries.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::estimation::MleState;
use crate::linalg::{norm1, norm2};
use crate::models::{score_delta, ModelKind, Observation, ShiftCoords};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L1,
    L2,
}

impl Norm {
    #[inline]
    pub fn apply(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => norm1(v),
            Norm::L2 => norm2(v),
        }
    }
}

/// Prefix sums of `d`-dimensional score vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePrefix {
    start_index: usize,
    d: usize,
    sums: Vec<f64>,
}

impl ScorePrefix {
    pub fn new(start_index: usize, d: usize) -> Self {
        Self { start_index, d, sums: Vec::new() }
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> usize {
        self.sums.len() / self.d.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    /// The `k`-th prefix sum (0-based).
    pub fn prefix(&self, k: usize) -> &[f64] {
        &self.sums[k * self.d..(k + 1) * self.d]
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.count().checked_sub(1).map(|k| self.prefix(k))
    }

    /// Appends `S_{t+1} = S_t + s`.
    pub fn append_score(&mut self, s: &[f64]) -> Result<()> {
        if s.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: s.len() });
        }
        crate::models::check_finite(s, "score")?;
        let n = self.sums.len();
        if n == 0 {
            self.sums.extend_from_slice(s);
        } else {
            self.sums.extend_from_within(n - self.d..n);
            for (a, b) in self.sums[n..].iter_mut().zip(s) {
                *a += b;
            }
        }
        Ok(())
    }

    /// `max_{t'} ‖S_current − S_{t'−1}‖` with `S_{start−1} = 0`.
    pub fn cusum_stat(&self, norm: Norm) -> Result<f64> {
        let Some(cur) = self.last() else {
            return Err(Error::OutOfRange(alloc::string::String::from("empty score prefix")));
        };
        Ok(cusum_over_prefixes(&self.sums, self.d, cur, norm))
    }
}

/// CUSUM of a flat prefix buffer whose final row is `cur`. Shared with the
/// bootstrap ensemble, which stores prefixes the same way.
pub(crate) fn cusum_over_prefixes(sums: &[f64], d: usize, cur: &[f64], norm: Norm) -> f64 {
    let count = sums.len() / d;
    let mut best = norm.apply(cur);
    let mut diff = [0.0f64; 16];
    let mut heap;
    let buf: &mut [f64] = if d <= diff.len() {
        &mut diff[..d]
    } else {
        heap = alloc::vec![0.0; d];
        &mut heap
    };
    for k in 0..count.saturating_sub(1) {
        let prev = &sums[k * d..(k + 1) * d];
        for ((o, c), p) in buf.iter_mut().zip(cur).zip(prev) {
            *o = c - p;
        }
        let v = norm.apply(buf);
        if v > best {
            best = v;
        }
    }
    best
}

/// Score of `obs` at the nuisance estimate fitted strictly before it.
pub fn plugin_score(obs: &Observation, mle_prev: &MleState, kind: ModelKind, coords: &ShiftCoords) -> Result<Vec<f64>> {
    if let Some(mt) = mle_prev.max_time {
        if mt >= obs.t {
            return Err(Error::OutOfRange(alloc::format!(
                "anticipative estimate: fitted through t={mt}, scoring t={}",
                obs.t
            )));
        }
    }
    score_delta(&mle_prev.theta_hat, &obs.z, obs.y, kind, coords)
}

/// Score of `obs` at a known pre-change parameter.
pub fn known_score(obs: &Observation, theta0: &[f64], kind: ModelKind, coords: &ShiftCoords) -> Result<Vec<f64>> {
    score_delta(theta0, &obs.z, obs.y, kind, coords)
}
