//! Newton–Raphson maximum likelihood for logistic regression.
//!
//! [`fit`] and [`sequential_update`] estimate the monitor's nuisance
//! parameter. [`fit_penalized`] is the ridge variant used by the learners.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{cholesky_with_jitter, dot, norm2, Cholesky, Matrix, MAX_CONDITION};
use crate::models::{sigmoid, Observation, PROB_CLAMP};
use crate::{Error, Result};

/// Convergence threshold on the L2 norm of the summed score.
pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 100;

/// Running MLE for the nuisance parameter together with the data it was
/// fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct MleState {
    pub theta_hat: Vec<f64>,
    pub last_gradient_norm: f64,
    pub converged: bool,
    /// Ridge jitter had to be applied in at least one Newton step.
    pub jittered: bool,
    /// Largest observation time index included in the fit.
    pub max_time: Option<usize>,
    q: usize,
    zs: Vec<f64>,
    ys: Vec<f64>,
}

impl MleState {
    pub fn n(&self) -> usize {
        self.ys.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Sum of θ-scores over the fitted data at `theta_hat`.
    pub fn gradient(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.q];
        for (z, &y) in self.zs.chunks_exact(self.q).zip(&self.ys) {
            let r = y - sigmoid(dot(&self.theta_hat, z));
            for (gi, zi) in g.iter_mut().zip(z) {
                *gi += r * zi;
            }
        }
        g
    }
}

fn push_observations(q: usize, zs: &mut Vec<f64>, ys: &mut Vec<f64>, obs: &[Observation]) -> Result<Option<usize>> {
    let mut max_t = None;
    for o in obs {
        if o.z.len() != q {
            return Err(Error::DimensionMismatch { expected: q, got: o.z.len() });
        }
        crate::models::check_finite(&o.z, "predictor vector")?;
        zs.extend_from_slice(&o.z);
        ys.push(o.yf());
        max_t = Some(max_t.map_or(o.t, |m: usize| m.max(o.t)));
    }
    Ok(max_t)
}

/// Ridge penalty `λ/2 Σ_{penalized j} θ_j²`.
#[derive(Debug, Clone, Copy)]
pub struct Penalty<'a> {
    pub lambda: f64,
    pub mask: &'a [bool],
}

struct NewtonOutcome {
    theta: Vec<f64>,
    grad_norm: f64,
    converged: bool,
    jittered: bool,
}

fn objective(theta: &[f64], q: usize, zs: &[f64], ys: &[f64], pen: Option<Penalty<'_>>) -> f64 {
    let mut ll = 0.0;
    for (z, &y) in zs.chunks_exact(q).zip(ys) {
        let p = sigmoid(dot(theta, z)).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        ll += if y > 0.5 { libm::log(p) } else { libm::log(1.0 - p) };
    }
    if let Some(pen) = pen {
        for (t, &m) in theta.iter().zip(pen.mask) {
            if m {
                ll -= 0.5 * pen.lambda * t * t;
            }
        }
    }
    ll
}

fn newton(q: usize, zs: &[f64], ys: &[f64], init: &[f64], pen: Option<Penalty<'_>>) -> NewtonOutcome {
    let mut theta = init.to_vec();
    let mut jittered = false;
    let mut obj = objective(&theta, q, zs, ys, pen);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let mut g = vec![0.0; q];
        let mut h = Matrix::zeros(q, q);
        let mut weight = 0.0;
        for (z, &y) in zs.chunks_exact(q).zip(ys) {
            let mu = sigmoid(dot(&theta, z));
            let r = y - mu;
            weight += mu * (1.0 - mu);
            for (gi, zi) in g.iter_mut().zip(z) {
                *gi += r * zi;
            }
            h.add_outer(mu * (1.0 - mu), z, z);
        }
        if let Some(pen) = pen {
            for j in 0..q {
                if pen.mask[j] {
                    g[j] -= pen.lambda * theta[j];
                    h[(j, j)] += pen.lambda;
                }
            }
        }
        grad_norm = norm2(&g);
        if grad_norm < GRAD_TOL {
            // Saturated fits (separation) have a vanishing gradient but a
            // degenerate information matrix.
            let saturated = weight < 1e-6 * ys.len() as f64;
            let well_posed =
                !saturated && Cholesky::new(&h).is_some_and(|c| c.condition_estimate() <= MAX_CONDITION);
            return NewtonOutcome { theta, grad_norm, converged: well_posed, jittered };
        }
        let Some((chol, jit)) = cholesky_with_jitter(&h) else {
            break;
        };
        jittered |= jit;
        let step = chol.solve(&g);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + scale * s).collect();
            let cand_obj = objective(&cand, q, zs, ys, pen);
            if cand_obj >= obj - 1e-12 * obj.abs().max(1.0) {
                theta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || !theta.iter().all(|t| t.is_finite()) {
            break;
        }
    }
    NewtonOutcome { theta, grad_norm, converged: false, jittered }
}

fn both_classes(ys: &[f64]) -> bool {
    let ones = ys.iter().filter(|&&y| y > 0.5).count();
    ones > 0 && ones < ys.len()
}

fn finish(q: usize, zs: Vec<f64>, ys: Vec<f64>, init: &[f64], max_time: Option<usize>) -> Result<MleState> {
    if ys.len() < q {
        return Err(Error::TooFewObservations { needed: q, got: ys.len() });
    }
    if !both_classes(&ys) {
        return Err(Error::Separable);
    }
    let out = newton(q, &zs, &ys, init, None);
    if !out.converged {
        return Err(Error::EstimationFailed(out.grad_norm));
    }
    Ok(MleState {
        theta_hat: out.theta,
        last_gradient_norm: out.grad_norm,
        converged: true,
        jittered: out.jittered,
        max_time,
        q,
        zs,
        ys,
    })
}

/// Unpenalized logistic MLE on `observations`, starting from `init`.
pub fn fit(observations: &[Observation], init: &[f64]) -> Result<MleState> {
    let q = init.len();
    let mut zs = Vec::with_capacity(q * observations.len());
    let mut ys = Vec::with_capacity(observations.len());
    let max_time = push_observations(q, &mut zs, &mut ys, observations)?;
    finish(q, zs, ys, init, max_time)
}

/// Refits on all accumulated data plus `batch`, warm-started at the current
/// estimate.
pub fn sequential_update(state: &MleState, batch: &[Observation]) -> Result<MleState> {
    if batch.is_empty() {
        return Ok(state.clone());
    }
    let mut zs = state.zs.clone();
    let mut ys = state.ys.clone();
    let max_new = push_observations(state.q, &mut zs, &mut ys, batch)?;
    let max_time = match (state.max_time, max_new) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    };
    finish(state.q, zs, ys, &state.theta_hat, max_time)
}

/// Ridge-penalized logistic regression on flat data (`zs` row-major with
/// `q` columns). Coordinates with `mask[j] == false` are unpenalized.
pub fn fit_penalized(q: usize, zs: &[f64], ys: &[f64], pen: Penalty<'_>, init: &[f64]) -> Result<Vec<f64>> {
    if pen.mask.len() != q || init.len() != q {
        return Err(Error::DimensionMismatch { expected: q, got: pen.mask.len().min(init.len()) });
    }
    if ys.is_empty() {
        return Err(Error::TooFewObservations { needed: 1, got: 0 });
    }
    let unpenalized = pen.mask.iter().any(|m| !m) || pen.lambda <= 0.0;
    if unpenalized && !both_classes(ys) {
        return Err(Error::Separable);
    }
    let out = newton(q, zs, ys, init, Some(pen));
    if out.converged {
        Ok(out.theta)
    } else {
        Err(Error::EstimationFailed(out.grad_norm))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, uniform_pm1};
    use rand::Rng;

    fn intercept_obs(ys: &[u8]) -> Vec<Observation> {
        ys.iter().enumerate().map(|(i, &y)| Observation::new(i + 1, vec![1.0], y).unwrap()).collect()
    }

    fn simulate(theta: &[f64], n: usize, seed: u64) -> Vec<Observation> {
        let mut rng = substream(seed, 0, 0);
        (0..n)
            .map(|i| {
                let z = vec![uniform_pm1(&mut rng) * 2.0, 1.0];
                let y = u8::from(rng.gen::<f64>() < sigmoid(dot(theta, &z)));
                Observation::new(i + 1, z, y).unwrap()
            })
            .collect()
    }

    #[test]
    fn intercept_only_closed_form() {
        let s = fit(&intercept_obs(&[1, 1, 1, 0]), &[0.0]).unwrap();
        assert!((s.theta_hat[0] - libm::log(3.0)).abs() < 1e-9);
        let s = fit(&intercept_obs(&[1, 0, 1, 0]), &[0.0]).unwrap();
        assert!(s.theta_hat[0].abs() < 1e-12);
    }

    #[test]
    fn consistency_on_large_sample() {
        let obs = simulate(&[2.0, 0.0], 100_000, 1);
        let s = fit(&obs, &[0.0, 0.0]).unwrap();
        assert!((s.theta_hat[0] - 2.0).abs() < 0.05 && s.theta_hat[1].abs() < 0.05, "{:?}", s.theta_hat);
    }

    #[test]
    fn separable_and_small_samples_fail() {
        assert_eq!(fit(&intercept_obs(&[1, 1, 1]), &[0.0]), Err(Error::Separable));
        assert_eq!(fit(&intercept_obs(&[0, 0]), &[0.0]), Err(Error::Separable));
        let obs = vec![Observation::new(1, vec![1.0, 1.0], 1).unwrap()];
        assert!(matches!(fit(&obs, &[0.0, 0.0]), Err(Error::TooFewObservations { .. })));
    }

    #[test]
    fn perfectly_separated_covariate_fails_to_converge() {
        let obs: Vec<Observation> = (0..20)
            .map(|i| {
                let x = i as f64 - 9.5;
                Observation::new(i + 1, vec![x, 1.0], u8::from(x > 0.0)).unwrap()
            })
            .collect();
        let r = fit(&obs, &[0.0, 0.0]);
        assert!(matches!(r, Err(Error::EstimationFailed(_))), "{r:?}");
    }

    #[test]
    fn residual_and_permutation_invariance() {
        let obs = simulate(&[1.0, -0.5], 500, 2);
        let a = fit(&obs, &[0.0, 0.0]).unwrap();
        assert!(norm2(&a.gradient()) < 1e-6);
        let mut shuffled = obs.clone();
        shuffled.reverse();
        shuffled.rotate_left(137);
        let b = fit(&shuffled, &[0.0, 0.0]).unwrap();
        for (x, y) in a.theta_hat.iter().zip(&b.theta_hat) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn sequential_update_matches_batch_refit() {
        let obs = simulate(&[1.0, 0.3], 400, 3);
        let (d1, d2) = obs.split_at(150);
        let s1 = fit(d1, &[0.0, 0.0]).unwrap();
        let seq = sequential_update(&s1, d2).unwrap();
        let full = fit(&obs, &[0.0, 0.0]).unwrap();
        for (x, y) in seq.theta_hat.iter().zip(&full.theta_hat) {
            assert!((x - y).abs() < 1e-8);
        }
        assert_eq!(seq.max_time, Some(400));
        assert_eq!(sequential_update(&s1, &[]).unwrap(), s1);
    }

    #[test]
    fn update_into_separable_data_errors() {
        let s = fit(&intercept_obs(&[1, 0]), &[0.0]).unwrap();
        let mut s2 = s.clone();
        s2.ys.clear();
        s2.zs.clear();
        assert_eq!(sequential_update(&s2, &intercept_obs(&[1, 1])), Err(Error::Separable));
    }

    #[test]
    fn penalized_limits() {
        let obs = simulate(&[1.5, -0.4], 300, 4);
        let zs: Vec<f64> = obs.iter().flat_map(|o| o.z.clone()).collect();
        let ys: Vec<f64> = obs.iter().map(|o| o.yf()).collect();
        let mask = [true, false];
        let plain = fit(&obs, &[0.0, 0.0]).unwrap();
        let zero = fit_penalized(2, &zs, &ys, Penalty { lambda: 0.0, mask: &mask }, &[0.0, 0.0]).unwrap();
        for (a, b) in zero.iter().zip(&plain.theta_hat) {
            assert!((a - b).abs() < 1e-6);
        }
        let huge = fit_penalized(2, &zs, &ys, Penalty { lambda: 1e9, mask: &mask }, &[0.0, 0.0]).unwrap();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        assert!(huge[0].abs() < 1e-5);
        assert!((sigmoid(huge[1]) - mean).abs() < 1e-5);
    }
}
