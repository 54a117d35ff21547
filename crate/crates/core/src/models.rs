//! Conditional outcome models for a binary outcome given a predictor vector.
//!
//! Both models share the logistic pre-change law `P(Y=1|z) = σ(θᵀz)` and
//! differ in how the shift `δ` enters:
//!
//! ```text
//! LogitShift: P(Y=1|z) = σ((θ + δ)ᵀz)
//! RiskShift:  P(Y=1|z) = clip(σ(θᵀz) + δᵀz, 0, 1)
//! ```
//!
//! The monitor only ever evaluates derivatives at `δ = 0`, where the clip in
//! the risk-shift model is inactive for any finite `θᵀz`.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Matrix};
use crate::{Error, Result};

/// Probability clamp used inside log-likelihoods only.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Shift on the log-odds scale.
    LogitShift,
    /// Shift on the risk scale, clipped to `[0, 1]`.
    RiskShift,
}

/// Which predictor coordinates the shift vector acts on. `δ[k]` multiplies
/// `z[coords[k]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftCoords(Vec<usize>);

impl ShiftCoords {
    pub fn full(q: usize) -> Self {
        Self((0..q).collect())
    }

    pub fn new(coords: Vec<usize>, q: usize) -> Result<Self> {
        for (i, &c) in coords.iter().enumerate() {
            if c >= q {
                return Err(Error::OutOfRange(alloc::format!("shift coordinate {c} >= q={q}")));
            }
            if coords[..i].contains(&c) {
                return Err(Error::InvalidConfig(alloc::format!("shift coordinate {c} repeated")));
            }
        }
        Ok(Self(coords))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Pre-change parameter, shift parameter and model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: Vec<f64>,
    pub delta: Vec<f64>,
    pub coords: ShiftCoords,
    pub kind: ModelKind,
}

impl ModelParams {
    /// Full-length shift (`δ` aligned with `z`).
    pub fn new(theta: Vec<f64>, delta: Vec<f64>, kind: ModelKind) -> Result<Self> {
        let q = theta.len();
        if delta.len() != q {
            return Err(Error::DimensionMismatch { expected: q, got: delta.len() });
        }
        Ok(Self { theta, delta, coords: ShiftCoords::full(q), kind })
    }

    pub fn with_coords(theta: Vec<f64>, delta: Vec<f64>, coords: ShiftCoords, kind: ModelKind) -> Result<Self> {
        if delta.len() != coords.len() {
            return Err(Error::DimensionMismatch { expected: coords.len(), got: delta.len() });
        }
        if coords.as_slice().iter().any(|&c| c >= theta.len()) {
            return Err(Error::OutOfRange(alloc::string::String::from("shift coordinate beyond θ")));
        }
        Ok(Self { theta, delta, coords, kind })
    }

    /// Null-shift parameters.
    pub fn null(theta: Vec<f64>, kind: ModelKind) -> Self {
        let q = theta.len();
        Self { theta, delta: vec![0.0; q], coords: ShiftCoords::full(q), kind }
    }

    pub fn q(&self) -> usize {
        self.theta.len()
    }

    pub fn d(&self) -> usize {
        self.coords.len()
    }
}

/// Binary outcome with its predictor vector and absolute time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: usize,
    pub z: Vec<f64>,
    pub y: u8,
}

impl Observation {
    pub fn new(t: usize, z: Vec<f64>, y: u8) -> Result<Self> {
        if y > 1 {
            return Err(Error::OutOfRange(alloc::format!("outcome {y} not in {{0,1}}")));
        }
        check_finite(&z, "predictor vector")?;
        Ok(Self { t, z, y })
    }

    #[inline]
    pub fn yf(&self) -> f64 {
        f64::from(self.y)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

pub(crate) fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

#[inline]
fn check_dims(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: a, got: b })
    }
}

/// `P(Y=1 | z)` under `params`, applying the shift when `shifted`.
pub fn predict_prob(params: &ModelParams, z: &[f64], shifted: bool) -> Result<f64> {
    check_dims(params.q(), z.len())?;
    check_finite(z, "predictor vector")?;
    check_finite(&params.theta, "theta")?;
    check_finite(&params.delta, "delta")?;
    let base = dot(&params.theta, z);
    if !shifted {
        return Ok(sigmoid(base));
    }
    let shift: f64 = params.coords.as_slice().iter().zip(&params.delta).map(|(&c, d)| d * z[c]).sum();
    Ok(match params.kind {
        ModelKind::LogitShift => sigmoid(base + shift),
        ModelKind::RiskShift => (sigmoid(base) + shift).clamp(0.0, 1.0),
    })
}

/// Bernoulli log-likelihood; the probability is clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn log_lik(params: &ModelParams, z: &[f64], y: u8, shifted: bool) -> Result<f64> {
    let p = predict_prob(params, z, shifted)?.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok(if y == 1 { libm::log(p) } else { libm::log(1.0 - p) })
}

/// `∇_θ log p(y | z; θ, 0) = (y − μ) z`, written into `out`.
#[inline]
pub fn score_theta_into(theta: &[f64], z: &[f64], y: f64, out: &mut [f64]) -> f64 {
    let mu = sigmoid(dot(theta, z));
    let r = y - mu;
    for (o, &zi) in out.iter_mut().zip(z) {
        *o = r * zi;
    }
    mu
}

pub fn score_theta(theta: &[f64], z: &[f64], y: u8) -> Result<Vec<f64>> {
    check_dims(theta.len(), z.len())?;
    check_finite(theta, "theta")?;
    check_finite(z, "predictor vector")?;
    let mut out = vec![0.0; z.len()];
    score_theta_into(theta, z, f64::from(y), &mut out);
    Ok(out)
}

/// Multiplier `w` such that `∇_δ log p = w · z[coords]` given the residual
/// `y − μ`, or an error when `μ` is numerically 0 or 1 for the risk model.
#[inline]
pub fn delta_score_weight(kind: ModelKind, mu: f64, y: f64) -> Result<f64> {
    match kind {
        ModelKind::LogitShift => Ok(y - mu),
        ModelKind::RiskShift => {
            let v = mu * (1.0 - mu);
            if v > 0.0 {
                Ok((y - mu) / v)
            } else {
                Err(Error::DegenerateProbability(mu))
            }
        }
    }
}

/// `∇_δ log p(y | z; θ, δ)|_{δ=0}` restricted to the shift coordinates.
pub fn score_delta(theta: &[f64], z: &[f64], y: u8, kind: ModelKind, coords: &ShiftCoords) -> Result<Vec<f64>> {
    check_dims(theta.len(), z.len())?;
    check_finite(theta, "theta")?;
    check_finite(z, "predictor vector")?;
    let mu = sigmoid(dot(theta, z));
    let w = delta_score_weight(kind, mu, f64::from(y))?;
    Ok(coords.as_slice().iter().map(|&c| w * z[c]).collect())
}

/// Expected negative Hessian of the log-likelihood in `θ`: `μ(1−μ) z zᵀ`.
pub fn info_theta(theta: &[f64], z: &[f64]) -> Result<Matrix> {
    check_dims(theta.len(), z.len())?;
    check_finite(theta, "theta")?;
    check_finite(z, "predictor vector")?;
    let mu = sigmoid(dot(theta, z));
    let mut m = Matrix::zeros(z.len(), z.len());
    m.add_outer(mu * (1.0 - mu), z, z);
    Ok(m)
}

/// `E[∇_θ ∇_δ log p | z]` at `δ = 0`, a `d × q` matrix.
///
/// For the logit shift this is `−μ(1−μ) z_δ zᵀ` (deterministic). For the risk
/// shift the random part `(y−μ)(1−2μ)/(μ(1−μ))·…` has zero conditional mean,
/// leaving `−z_δ zᵀ`.
pub fn cross_info(theta: &[f64], z: &[f64], kind: ModelKind, coords: &ShiftCoords) -> Result<Matrix> {
    check_dims(theta.len(), z.len())?;
    check_finite(theta, "theta")?;
    check_finite(z, "predictor vector")?;
    let mu = sigmoid(dot(theta, z));
    let scale = match kind {
        ModelKind::LogitShift => -mu * (1.0 - mu),
        ModelKind::RiskShift => {
            if mu * (1.0 - mu) <= 0.0 {
                return Err(Error::DegenerateProbability(mu));
            }
            -1.0
        }
    };
    let zd: Vec<f64> = coords.as_slice().iter().map(|&c| z[c]).collect();
    let mut m = Matrix::zeros(zd.len(), z.len());
    m.add_outer(scale, &zd, z);
    Ok(m)
}
