//! Probability maps from score vectors onto the simplex.
//!
//! All maps here fold the inverse temperature into the argument, so
//! `alpha_entmax(z, α, β)` is α-entmax evaluated at `β·z`:
//!
//! ```text
//! α-entmax(βz) = argmax_{p ∈ Δ} ⟨p, βz⟩ + H_α(p)
//!              = [(α−1)·βz − τ·1]_+^{1/(α−1)}
//! ```
//!
//! where `H_α` is the Tsallis entropy and `τ` is the unique threshold that
//! puts the result on the simplex. `α = 1` is softmax and `α = 2` is
//! sparsemax; both, and `α = 1.5`, are solved exactly. Other values of α use
//! bisection on `τ`.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bracket-width tolerance used when callers do not pick one.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Hard cap on threshold bisection steps.
pub const MAX_BISECTION_ITERS: usize = 200;

/// Finite score vector of length ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("logits must be non-empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "logit {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Logits(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Logits {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<&[f64]> for Logits {
    type Error = Error;

    fn try_from(v: &[f64]) -> Result<Self> {
        Logits::new(v.to_vec())
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates nonnegativity and unit mass (within 1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("probability vector is empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(ProbVector(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Indices with strictly positive mass.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn support_size(&self) -> usize {
        self.0.iter().filter(|p| **p > 0.0).count()
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Entmax sparsity parameter, `1 ≤ α ≤ 2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub const SOFTMAX: Alpha = Alpha(1.0);
    pub const ENTMAX15: Alpha = Alpha(1.5);
    pub const SPARSEMAX: Alpha = Alpha(2.0);

    pub fn new(value: f64) -> Result<Self> {
        if (1.0..=2.0).contains(&value) {
            Ok(Alpha(value))
        } else {
            Err(Error::Domain(format!("alpha must lie in [1, 2], got {value}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Alpha {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Alpha::new(v)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

/// Threshold `τ` and support size `κ` of an entmax evaluation.
///
/// For `α > 1`, `p_i = [(α−1)βz_i − τ]_+^{1/(α−1)}`. For `α = 1` the formula
/// degenerates; `τ` is then the log-partition `log Σ exp(βz_j)` so that
/// `p_i = exp(βz_i − τ)`, and `κ = n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub tau: f64,
    pub kappa: usize,
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("beta must be positive and finite, got {beta}")))
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol.is_finite() && tol > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("tolerance must be positive, got {tol}")))
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `lse(β, z) = (1/β) log Σ exp(β z_i)`, computed with the max shifted out.
pub fn lse(z: &Logits, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let zmax = max_of(z);
    let sum: f64 = z.iter().map(|&v| (beta * (v - zmax)).exp()).sum();
    Ok(zmax + sum.ln() / beta)
}

pub fn softmax(z: &Logits, beta: f64) -> Result<ProbVector> {
    check_beta(beta)?;
    let zmax = max_of(z);
    let mut p: Vec<f64> = z.iter().map(|&v| (beta * (v - zmax)).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(ProbVector(p))
}

/// α-entmax of `βz`.
///
/// Exact for α ∈ {1, 1.5, 2}; otherwise bisects the threshold down to a
/// bracket of width `tol`.
pub fn alpha_entmax(z: &Logits, alpha: Alpha, beta: f64, tol: f64) -> Result<ProbVector> {
    Ok(solve(z, alpha, beta, tol)?.0)
}

/// Threshold and support size consistent with [`alpha_entmax`] at the
/// default tolerance.
pub fn threshold_and_support(z: &Logits, alpha: Alpha, beta: f64) -> Result<ThresholdReport> {
    Ok(solve(z, alpha, beta, DEFAULT_TOL)?.1)
}

/// Same as [`alpha_entmax`] but returns the threshold report alongside.
pub fn alpha_entmax_with_threshold(
    z: &Logits,
    alpha: Alpha,
    beta: f64,
    tol: f64,
) -> Result<(ProbVector, ThresholdReport)> {
    solve(z, alpha, beta, tol)
}

fn solve(z: &Logits, alpha: Alpha, beta: f64, tol: f64) -> Result<(ProbVector, ThresholdReport)> {
    check_beta(beta)?;
    check_tol(tol)?;
    let a = alpha.get();
    if a == 1.0 {
        let p = softmax(z, beta)?;
        let tau = beta * lse(z, beta)?;
        let kappa = p.support_size();
        Ok((p, ThresholdReport { tau, kappa }))
    } else if a == 2.0 {
        Ok(sparsemax(z, beta))
    } else if a == 1.5 {
        Ok(entmax15(z, beta))
    } else {
        bisect(z, a, beta, tol)
    }
}

/// α-entmax of `βz` by threshold bisection, whatever α is.
///
/// Used as the general path and as a cross-check for the exact solvers.
pub fn entmax_bisect(z: &Logits, alpha: Alpha, beta: f64, tol: f64) -> Result<ProbVector> {
    check_beta(beta)?;
    check_tol(tol)?;
    if alpha.get() == 1.0 {
        return softmax(z, beta);
    }
    Ok(bisect(z, alpha.get(), beta, tol)?.0)
}

fn scores_sorted_desc(scores: &[f64]) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted
}

fn sparsemax(z: &Logits, beta: f64) -> (ProbVector, ThresholdReport) {
    let scores: Vec<f64> = z.iter().map(|&v| beta * v).collect();
    let sorted = scores_sorted_desc(&scores);
    let mut cumsum = 0.0;
    let mut support = 1;
    let mut support_sum = sorted[0];
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let k = (i + 1) as f64;
        if 1.0 + k * s > cumsum {
            support = i + 1;
            support_sum = cumsum;
        }
    }
    let tau = (support_sum - 1.0) / support as f64;
    finish(&scores, tau, 1.0)
}

/// Sorted-segment closed form for α = 1.5 on `s = βz/2`, `p = [s − τ]_+²`.
///
/// For each prefix of the sorted scores the normalisation condition is a
/// quadratic in `τ`; the first prefix whose root separates it from the next
/// score is the support.
fn entmax15(z: &Logits, beta: f64) -> (ProbVector, ThresholdReport) {
    let scores: Vec<f64> = z.iter().map(|&v| 0.5 * beta * v).collect();
    let sorted = scores_sorted_desc(&scores);
    let n = sorted.len();

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut taus = Vec::with_capacity(n);
    let mut chosen = None;
    for k in 1..=n {
        let s = sorted[k - 1];
        sum += s;
        sum_sq += s * s;
        let kf = k as f64;
        let mean = sum / kf;
        let mean_sq = sum_sq / kf;
        let delta = (1.0 - kf * (mean_sq - mean * mean)) / kf;
        let tau = mean - delta.max(0.0).sqrt();
        taus.push(tau);
        let next = if k < n { sorted[k] } else { f64::NEG_INFINITY };
        if chosen.is_none() && tau < s && tau >= next {
            chosen = Some(k);
        }
    }
    // Rounding can leave no prefix strictly feasible; fall back to the
    // largest prefix whose threshold stays at or below its last score.
    let k = chosen.unwrap_or_else(|| {
        (1..=n)
            .filter(|&k| taus[k - 1] <= sorted[k - 1])
            .max()
            .unwrap_or(1)
    });
    finish(&scores, taus[k - 1], 0.5)
}

fn bisect(z: &Logits, alpha: f64, beta: f64, tol: f64) -> Result<(ProbVector, ThresholdReport)> {
    let am1 = alpha - 1.0;
    let inv = 1.0 / am1;
    let scores: Vec<f64> = z.iter().map(|&v| am1 * beta * v).collect();
    let smax = max_of(&scores);

    let mass = |tau: f64| -> f64 {
        scores
            .iter()
            .map(|&s| if s > tau { (s - tau).powf(inv) } else { 0.0 })
            .sum()
    };

    // mass(smax − 1) ≥ 1 from the top entry alone; mass(smax) = 0.
    let mut lo = smax - 1.0;
    let mut hi = smax;
    let mut converged = false;
    for _ in 0..MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if mass(mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::BisectionStalled {
            bracket_width: hi - lo,
        });
    }
    Ok(finish(&scores, 0.5 * (lo + hi), am1))
}

/// Builds `p_i = [s_i − τ]_+^{1/(α−1)}` and renormalises.
fn finish(scores: &[f64], tau: f64, am1: f64) -> (ProbVector, ThresholdReport) {
    let inv = 1.0 / am1;
    let mut p: Vec<f64> = scores
        .iter()
        .map(|&s| {
            if s > tau {
                let base = s - tau;
                if am1 == 1.0 {
                    base
                } else if am1 == 0.5 {
                    base * base
                } else {
                    base.powf(inv)
                }
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.iter_mut().for_each(|v| *v /= total);
    } else {
        // Degenerate bracket; put all mass on the first maximiser.
        let imax = scores
            .iter()
            .enumerate()
            .fold(0, |best, (i, &s)| if s > scores[best] { i } else { best });
        p[imax] = 1.0;
    }
    let kappa = p.iter().filter(|v| **v > 0.0).count();
    (ProbVector(p), ThresholdReport { tau, kappa })
}

/// Tsallis entropy `H_α(p)`; the Shannon entropy at α = 1 (`0·log 0 = 0`).
pub fn tsallis_entropy(p: &ProbVector, alpha: Alpha) -> f64 {
    let a = alpha.get();
    if a == 1.0 {
        -p.iter()
            .filter(|v| **v > 0.0)
            .map(|&v| v * v.ln())
            .sum::<f64>()
    } else {
        p.iter().map(|&v| v - v.powf(a)).sum::<f64>() / (a * (a - 1.0))
    }
}

/// Temperature-scaled convex conjugate of the negative Tsallis entropy:
///
/// ```text
/// (1/β) · max_{p ∈ Δ} ⟨p, βz⟩ + H_α(p)
/// ```
///
/// attained at `p* = alpha_entmax(z, α, β)`. Equals `lse(β, z)` at α = 1.
pub fn tsallis_conjugate(z: &Logits, alpha: Alpha, beta: f64) -> Result<f64> {
    if alpha.get() == 1.0 {
        return lse(z, beta);
    }
    let p = alpha_entmax(z, alpha, beta, DEFAULT_TOL)?;
    let inner: f64 = p.iter().zip(z.iter()).map(|(pi, zi)| pi * zi).sum();
    Ok(inner + tsallis_entropy(&p, alpha) / beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lg(v: &[f64]) -> Logits {
        Logits::new(v.to_vec()).unwrap()
    }

    fn a(v: f64) -> Alpha {
        Alpha::new(v).unwrap()
    }

    fn close(p: &[f64], q: &[f64], tol: f64) {
        assert_eq!(p.len(), q.len());
        for (x, y) in p.iter().zip(q) {
            assert!((x - y).abs() <= tol, "{p:?} vs {q:?}");
        }
    }

    #[test]
    fn softmax_examples() {
        close(&softmax(&lg(&[0.0, 0.0, 0.0]), 1.0).unwrap(), &[1.0 / 3.0; 3], 1e-15);
        close(&softmax(&lg(&[5.0, 5.0]), 2.0).unwrap(), &[0.5, 0.5], 1e-15);
        close(
            &softmax(&lg(&[2f64.ln(), 0.0]), 1.0).unwrap(),
            &[2.0 / 3.0, 1.0 / 3.0],
            1e-15,
        );
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let p = softmax(&lg(&[1000.0, 999.0]), 1.0).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0] + p[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_finite_and_bad_params() {
        assert!(matches!(Logits::new(vec![1.0, f64::NAN]), Err(Error::InvalidInput(_))));
        assert!(matches!(Logits::new(vec![]), Err(Error::InvalidInput(_))));
        assert!(matches!(Alpha::new(2.5), Err(Error::Domain(_))));
        assert!(matches!(Alpha::new(0.9), Err(Error::Domain(_))));
        assert!(matches!(softmax(&lg(&[0.0]), 0.0), Err(Error::Domain(_))));
        assert!(alpha_entmax(&lg(&[0.0]), a(1.3), 1.0, -1.0).is_err());
    }

    #[test]
    fn sparsemax_examples() {
        close(&alpha_entmax(&lg(&[2.0, 0.0]), a(2.0), 1.0, DEFAULT_TOL).unwrap(), &[1.0, 0.0], 0.0);
        close(
            &alpha_entmax(&lg(&[0.5, 0.0]), a(2.0), 1.0, DEFAULT_TOL).unwrap(),
            &[0.75, 0.25],
            1e-15,
        );
    }

    #[test]
    fn constant_logits_give_uniform() {
        for alpha in [1.0, 1.2, 1.5, 1.8, 2.0] {
            let p = alpha_entmax(&lg(&[3.0; 5]), a(alpha), 0.7, DEFAULT_TOL).unwrap();
            close(&p, &[0.2; 5], 1e-9);
        }
    }

    #[test]
    fn alpha_one_is_softmax() {
        let z = lg(&[0.3, -1.2, 2.0, 0.0]);
        assert_eq!(
            alpha_entmax(&z, a(1.0), 1.7, DEFAULT_TOL).unwrap(),
            softmax(&z, 1.7).unwrap()
        );
    }

    #[test]
    fn threshold_examples() {
        let r = threshold_and_support(&lg(&[2.0, 0.0]), a(2.0), 1.0).unwrap();
        assert_abs_diff_eq!(r.tau, 1.0, epsilon = 1e-15);
        assert_eq!(r.kappa, 1);

        let r = threshold_and_support(&lg(&[0.0, 0.0, 0.0]), a(2.0), 1.0).unwrap();
        assert_abs_diff_eq!(r.tau, -1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(r.kappa, 3);

        let z = lg(&[3.0, 1.0, 0.0]);
        let k2 = threshold_and_support(&z, a(2.0), 1.0).unwrap().kappa;
        let k15 = threshold_and_support(&z, a(1.5), 1.0).unwrap().kappa;
        assert!(k2 <= k15);
    }

    #[test]
    fn threshold_reconstructs_probabilities() {
        let z = lg(&[0.4, -0.3, 1.1, 0.9, -2.0]);
        for alpha in [1.25, 1.5, 1.75, 2.0] {
            let (p, r) = alpha_entmax_with_threshold(&z, a(alpha), 1.3, 1e-12).unwrap();
            let am1 = alpha - 1.0;
            let rebuilt: Vec<f64> = z
                .iter()
                .map(|&zi| (am1 * 1.3 * zi - r.tau).max(0.0).powf(1.0 / am1))
                .collect();
            close(&p, &rebuilt, 1e-9);
            assert_eq!(r.kappa, p.support_size());
        }
    }

    #[test]
    fn boundary_tie_gets_zero_mass() {
        // Sparsemax of [1, 0]: τ = 0 exactly, so the second entry sits on
        // the threshold.
        let (p, r) = alpha_entmax_with_threshold(&lg(&[1.0, 0.0]), a(2.0), 1.0, DEFAULT_TOL).unwrap();
        assert_eq!(r.tau, 0.0);
        assert_eq!(p.as_slice(), &[1.0, 0.0]);
        assert_eq!(r.kappa, 1);
    }

    #[test]
    fn bisection_reports_stall() {
        let err = entmax_bisect(&lg(&[1e6, 0.0, 3.0]), a(1.3), 1.0, 1e-300).unwrap_err();
        match err {
            Error::BisectionStalled { bracket_width } => assert!(bracket_width > 1e-300),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tsallis_entropy_examples() {
        let p = ProbVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(tsallis_entropy(&p, a(2.0)), 0.0);
        let half = ProbVector::new(vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(tsallis_entropy(&half, a(2.0)), 0.25, epsilon = 1e-15);
        // (4/3)·2·(0.5 − 0.5^1.5)
        let expected = (4.0 / 3.0) * 2.0 * (0.5 - 0.5f64.powf(1.5));
        assert_abs_diff_eq!(tsallis_entropy(&half, a(1.5)), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.390524291751269, epsilon = 1e-12);
        assert_abs_diff_eq!(tsallis_entropy(&half, a(1.0)), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn conjugate_examples() {
        for alpha in [1.0, 1.5, 2.0, 1.3] {
            assert_abs_diff_eq!(tsallis_conjugate(&lg(&[5.0]), a(alpha), 1.0).unwrap(), 5.0, epsilon = 1e-12);
        }
        // max over p of ⟨p, 0⟩ + H_2(p) is attained at uniform: +0.25.
        assert_abs_diff_eq!(tsallis_conjugate(&lg(&[0.0, 0.0]), a(2.0), 1.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(tsallis_conjugate(&lg(&[2.0, 0.0]), a(2.0), 1.0).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            tsallis_conjugate(&lg(&[0.0, 0.0]), a(1.0), 1.0).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
    }

    /// Grid search over the 2-simplex for the conjugate's maximiser.
    #[test]
    fn conjugate_matches_grid_maximum() {
        let z = lg(&[0.7, -0.2]);
        for alpha in [1.0, 1.5, 2.0] {
            let beta = 1.4;
            let best = (0..=20000)
                .map(|i| {
                    let t = i as f64 / 20000.0;
                    let p = ProbVector(vec![t, 1.0 - t]);
                    t * z[0] + (1.0 - t) * z[1] + tsallis_entropy(&p, a(alpha)) / beta
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let c = tsallis_conjugate(&z, a(alpha), beta).unwrap();
            assert!(c >= best - 1e-12);
            assert!(c - best < 1e-6, "alpha {alpha}: {c} vs grid {best}");
        }
    }
}
