//! Geometry-aware attention guidance (GAG) on top of a sparse/dense
//! operator pair.
//!
//! ```text
//! r(x)  = T_sparse(x) − T_dense(x)
//! r̃(x)  = r∥(x) + ζ·r⊥(x)            (split against T_sparse(x))
//! T_λ(x) = T_sparse(x) + λ·min(1, η/‖r̃‖)·r̃
//! ```
//!
//! With `ζ = 1, η = ∞` this is the plain sparse-minus-dense extrapolation.

use nalgebra::DVector;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::entmax::Alpha;
use crate::error::{ensure_dim, Error, Result};
use crate::fixed_point::{check_run, diverged, safe_norm, IterationTrace, Operator};

/// Directions shorter than this are treated as zero.
pub const DIRECTION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceParams {
    pub lambda: f64,
    pub zeta: f64,
    #[serde(with = "extended_f64")]
    pub eta: f64,
    pub alpha: Alpha,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        GuidanceParams {
            lambda: 10.0,
            zeta: 0.0,
            eta: 15.0,
            alpha: Alpha::ENTMAX15,
        }
    }
}

impl GuidanceParams {
    pub fn new(lambda: f64, zeta: f64, eta: f64, alpha: Alpha) -> Result<Self> {
        let p = GuidanceParams {
            lambda,
            zeta,
            eta,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Domain(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(Error::Domain(format!("zeta must lie in [0, 1], got {}", self.zeta)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Domain(format!("eta must be positive, got {}", self.eta)));
        }
        Ok(())
    }
}

/// Serialises `+∞` as the string `"inf"` since JSON has no infinity.
pub mod extended_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => parse(&t).ok_or_else(|| serde::de::Error::custom(format!("not a number: {t:?}"))),
        }
    }

    pub fn parse(t: &str) -> Option<f64> {
        match t.trim().to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
            "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            other => other.parse().ok(),
        }
    }
}

/// Splits `r` into the part along `direction` and the remainder.
///
/// A direction shorter than [`DIRECTION_EPS`] has no parallel part, so the
/// whole residual is returned as orthogonal.
pub fn decompose_residual(r: &DVector<f64>, direction: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    ensure_dim(r.len(), direction.len())?;
    let dd = direction.norm_squared();
    if dd.sqrt() < DIRECTION_EPS {
        return Ok((DVector::zeros(r.len()), r.clone()));
    }
    let parallel = direction * (r.dot(direction) / dd);
    let orthogonal = r - &parallel;
    Ok((parallel, orthogonal))
}

/// `‖Π⊥(x − x*)‖` with `Π⊥` projecting out `direction`.
pub fn orthogonal_error(x: &DVector<f64>, x_star: &DVector<f64>, direction: &DVector<f64>) -> Result<f64> {
    ensure_dim(x.len(), x_star.len())?;
    let (_, perp) = decompose_residual(&(x - x_star), direction)?;
    Ok(perp.norm())
}

/// Everything computed in one GAG update.
#[derive(Debug, Clone, PartialEq)]
pub struct GagStep {
    pub next: DVector<f64>,
    pub sparse: DVector<f64>,
    pub dense: DVector<f64>,
    /// `λ·min(1, η/‖r̃‖)·r̃`
    pub guidance: DVector<f64>,
}

impl GagStep {
    pub fn guidance_norm(&self) -> f64 {
        self.guidance.norm()
    }
}

/// Applies the filtered, capped extrapolation to a precomputed sparse/dense
/// pair. Shared by [`gag_step`] and the batched attention kernel.
pub fn guided_update(sparse: &DVector<f64>, dense: &DVector<f64>, params: &GuidanceParams) -> Result<(DVector<f64>, DVector<f64>)> {
    ensure_dim(sparse.len(), dense.len())?;
    let r = sparse - dense;
    let filtered = if params.zeta == 1.0 {
        r
    } else {
        let (parallel, orthogonal) = decompose_residual(&r, sparse)?;
        if params.zeta == 0.0 {
            parallel
        } else {
            parallel + orthogonal * params.zeta
        }
    };
    let norm = filtered.norm();
    let factor = if norm == 0.0 { 1.0 } else { (params.eta / norm).min(1.0) };
    let guidance = filtered * (params.lambda * factor);
    Ok((sparse + &guidance, guidance))
}

pub fn gag_step_detailed<S: Operator, D: Operator>(
    t_sparse: &S,
    t_dense: &D,
    x: &DVector<f64>,
    params: &GuidanceParams,
) -> Result<GagStep> {
    ensure_dim(t_sparse.dim(), t_dense.dim())?;
    ensure_dim(t_sparse.dim(), x.len())?;
    let sparse = t_sparse.apply(x)?;
    let dense = t_dense.apply(x)?;
    let (next, guidance) = guided_update(&sparse, &dense, params)?;
    Ok(GagStep {
        next,
        sparse,
        dense,
        guidance,
    })
}

/// One GAG update `T_λ(x)`.
pub fn gag_step<S: Operator, D: Operator>(
    t_sparse: &S,
    t_dense: &D,
    x: &DVector<f64>,
    params: &GuidanceParams,
) -> Result<DVector<f64>> {
    Ok(gag_step_detailed(t_sparse, t_dense, x, params)?.next)
}

/// Iterates `x_{t+1} = T_λ(x_t)`.
///
/// The residual recorded for state `x_t` is `‖T_λ(x_t) − x_t‖`. When
/// `x_star` is given, `u_t = ‖Π⊥(x_t)(x_t − x*)‖` is recorded with `Π⊥(x_t)`
/// projecting out `T_sparse(x_t)`.
pub fn gag_iterate<S: Operator, D: Operator>(
    t_sparse: &S,
    t_dense: &D,
    x0: &DVector<f64>,
    params: &GuidanceParams,
    x_star: Option<&DVector<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<IterationTrace> {
    params.validate()?;
    ensure_dim(t_sparse.dim(), t_dense.dim())?;
    check_run(t_sparse.dim(), x0, tol, max_iter)?;
    if let Some(xs) = x_star {
        ensure_dim(x0.len(), xs.len())?;
    }

    let mut trace = IterationTrace {
        states: vec![x0.clone()],
        ortho_errors: x_star.map(|_| Vec::new()),
        guidance_norms: Some(Vec::new()),
        ..Default::default()
    };
    let mut x = x0.clone();
    loop {
        let step = gag_step_detailed(t_sparse, t_dense, &x, params)?;
        if step.next.iter().any(|v| !v.is_finite()) {
            return Err(diverged(trace));
        }
        if let (Some(xs), Some(u)) = (x_star, trace.ortho_errors.as_mut()) {
            u.push(orthogonal_error(&x, xs, &step.sparse)?);
        }
        trace.guidance_norms.as_mut().unwrap().push(step.guidance_norm());
        let res = safe_norm(&(&step.next - &x));
        if !res.is_finite() {
            return Err(diverged(trace));
        }
        trace.residual_norms.push(res);
        let k = trace.states.len() - 1;
        if res <= tol {
            trace.converged = true;
            trace.iterations_used = k;
            return Ok(trace);
        }
        if k >= max_iter {
            trace.iterations_used = k;
            return Ok(trace);
        }
        x = step.next;
        trace.states.push(x.clone());
    }
}

/// One half of a [`SyntheticWeakContraction`] pair.
///
/// The sparse map is `x ↦ ρ·Q x` with `Q` a rotation by angle ψ in the
/// plane `(g, h)`. The dense map is `κ·T_sparse(x)` plus a kick `k·Π⊥ K x`,
/// where `K` is the quarter turn in the same plane and `Π⊥` projects out
/// `T_sparse(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMap {
    label: &'static str,
    rate: f64,
    angle: f64,
    g: DVector<f64>,
    h: DVector<f64>,
    dense: Option<(f64, f64)>,
}

impl SyntheticMap {
    fn rotate(&self, x: &DVector<f64>) -> DVector<f64> {
        let (a, b) = (self.g.dot(x), self.h.dot(x));
        let (s, c) = self.angle.sin_cos();
        x + &self.g * ((c - 1.0) * a - s * b) + &self.h * ((c - 1.0) * b + s * a)
    }
}

impl Operator for SyntheticMap {
    fn dim(&self) -> usize {
        self.g.len()
    }

    fn label(&self) -> &str {
        self.label
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim(self.g.len(), x.len())?;
        let y = self.rotate(x) * self.rate;
        let Some((gain, kick)) = self.dense else {
            return Ok(y);
        };
        let turn = &self.h * self.g.dot(x) - &self.g * self.h.dot(x);
        let (_, across) = decompose_residual(&turn, &y)?;
        Ok(&y * gain + across * kick)
    }
}

/// Operator pair sharing the fixed point `x* = 0` on which the orthogonal
/// weak contraction `u_{k+1} ≤ c·u_k − φ(u_k)`, `φ(u) = phi_slope·u`, holds
/// for the GAG iteration with ζ = 0.
///
/// Write `ρ = c − phi_slope` and `u(x) = ‖Π⊥(x)x‖` with `Π⊥(x)` projecting
/// out `T_sparse(x) = ρQx`. Because `Q` is orthogonal, `u(ρQx) = ρ·u(x)`
/// and `u(s·x) = |s|·u(x)`. The dense residual is `(1 − κ)T_sparse(x)` plus
/// a part orthogonal to `T_sparse(x)`, so with ζ = 0 one step is
/// `x ↦ (1 − λσ(κ − 1))·T_sparse(x)` with `σ = min(1, η/‖r̃‖) ∈ (0, 1]`, and
///
/// ```text
/// u_{k+1} = |1 − λσ(κ − 1)|·ρ·u_k ≤ (c − phi_slope)·u_k   whenever λ(κ − 1) ≤ 2.
/// ```
///
/// With ζ > 0 the orthogonal kick passes through and the inequality can fail.
/// Directions shorter than [`DIRECTION_EPS`] are treated as zero, so runs
/// should stop before `‖x‖` reaches that scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWeakContraction {
    pub c: f64,
    pub phi_slope: f64,
    pub fixed_point: DVector<f64>,
    /// First axis of the rotation plane.
    pub guidance_direction: DVector<f64>,
    /// Rotation angle ψ of the sparse map.
    pub angle: f64,
    /// Dense gain κ ≥ 1.
    pub dense_gain: f64,
    pub kick: f64,
}

impl SyntheticWeakContraction {
    pub const DEFAULT_ANGLE: f64 = 0.3;
    pub const DEFAULT_DENSE_GAIN: f64 = 1.05;

    /// Needs `d ≥ 2`; `direction` need not be normalised.
    pub fn new(c: f64, phi_slope: f64, direction: &DVector<f64>) -> Result<Self> {
        if !(0.0..1.0).contains(&c) {
            return Err(Error::Domain(format!("contraction coefficient must lie in [0, 1), got {c}")));
        }
        if !(phi_slope > 0.0 && phi_slope <= c && c + phi_slope < 1.0) {
            return Err(Error::Domain(format!(
                "forcing slope must satisfy 0 < slope ≤ c and c + slope < 1, got {phi_slope}"
            )));
        }
        if direction.len() < 2 {
            return Err(Error::InvalidInput("the synthetic testbed needs dimension ≥ 2".into()));
        }
        let n = direction.norm();
        if !(n.is_finite() && n > DIRECTION_EPS) {
            return Err(Error::InvalidInput("guidance direction must be non-zero".into()));
        }
        Ok(SyntheticWeakContraction {
            c,
            phi_slope,
            fixed_point: DVector::zeros(direction.len()),
            guidance_direction: direction / n,
            angle: Self::DEFAULT_ANGLE,
            dense_gain: Self::DEFAULT_DENSE_GAIN,
            kick: 0.0,
        })
    }

    pub fn with_angle(mut self, angle: f64) -> Result<Self> {
        if !angle.is_finite() {
            return Err(Error::Domain(format!("rotation angle must be finite, got {angle}")));
        }
        self.angle = angle;
        Ok(self)
    }

    pub fn with_dense_gain(mut self, gain: f64) -> Result<Self> {
        if !(gain.is_finite() && gain >= 1.0) {
            return Err(Error::Domain(format!("dense gain must be ≥ 1, got {gain}")));
        }
        self.dense_gain = gain;
        Ok(self)
    }

    /// Strength of the dense map's orthogonal kick.
    pub fn with_kick(mut self, kick: f64) -> Result<Self> {
        if !kick.is_finite() {
            return Err(Error::Domain(format!("kick must be finite, got {kick}")));
        }
        self.kick = kick;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.fixed_point.len()
    }

    /// Per-step orthogonal contraction rate `ρ = c − φ'`.
    pub fn sparse_rate(&self) -> f64 {
        self.c - self.phi_slope
    }

    pub fn phi(&self, u: f64) -> f64 {
        self.phi_slope * u
    }

    /// Right-hand side `c·u − φ(u)` of the weak contraction inequality.
    pub fn contraction_bound(&self, u: f64) -> f64 {
        self.c * u - self.phi(u)
    }

    /// Largest λ for which the inequality is guaranteed, `2/(κ − 1)`.
    pub fn max_lambda(&self) -> f64 {
        if self.dense_gain == 1.0 {
            f64::INFINITY
        } else {
            2.0 / (self.dense_gain - 1.0)
        }
    }

    fn map(&self, label: &'static str, dense: Option<(f64, f64)>) -> SyntheticMap {
        let (h, _) = orthogonal_plane(&self.guidance_direction);
        SyntheticMap {
            label,
            rate: self.sparse_rate(),
            angle: self.angle,
            g: self.guidance_direction.clone(),
            h,
            dense,
        }
    }

    pub fn sparse_operator(&self) -> SyntheticMap {
        self.map("synthetic-sparse", None)
    }

    pub fn dense_operator(&self) -> SyntheticMap {
        self.map("synthetic-dense", Some((self.dense_gain, self.kick)))
    }

    /// Both sides of the weak contraction inequality for one GAG step from
    /// `x`: `(u(T_λ(x)), c·u(x) − φ(u(x)))`, each `u` measured against the
    /// sparse image at its own state.
    pub fn assumption_sides(&self, x: &DVector<f64>, params: &GuidanceParams) -> Result<(f64, f64)> {
        let sparse = self.sparse_operator();
        let step = gag_step_detailed(&sparse, &self.dense_operator(), x, params)?;
        let u = orthogonal_error(x, &self.fixed_point, &step.sparse)?;
        let next_dir = sparse.apply(&step.next)?;
        let lhs = orthogonal_error(&step.next, &self.fixed_point, &next_dir)?;
        Ok((lhs, self.contraction_bound(u)))
    }
}

/// Two orthonormal vectors orthogonal to the unit vector `g`.
fn orthogonal_plane(g: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let d = g.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(2);
    for i in 0..d {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v -= g * g.dot(&v);
        for b in &basis {
            v -= b * b.dot(&v);
        }
        let n = v.norm();
        if n > 1e-6 {
            basis.push(v / n);
            if basis.len() == 2 {
                break;
            }
        }
    }
    (basis[0].clone(), basis[1].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed_point::FnOperator;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn params(lambda: f64, zeta: f64, eta: f64) -> GuidanceParams {
        GuidanceParams::new(lambda, zeta, eta, Alpha::ENTMAX15).unwrap()
    }

    #[test]
    fn defaults() {
        let p = GuidanceParams::default();
        assert_eq!((p.lambda, p.zeta, p.eta), (10.0, 0.0, 15.0));
    }

    #[test]
    fn param_domains() {
        assert!(GuidanceParams::new(-1.0, 0.0, 1.0, Alpha::ENTMAX15).is_err());
        assert!(GuidanceParams::new(1.0, 1.5, 1.0, Alpha::ENTMAX15).is_err());
        assert!(GuidanceParams::new(1.0, 0.5, 0.0, Alpha::ENTMAX15).is_err());
        assert!(GuidanceParams::new(1.0, 0.5, f64::INFINITY, Alpha::ENTMAX15).is_ok());
    }

    #[test]
    fn infinite_eta_round_trips_through_json() {
        let p = params(2.0, 1.0, f64::INFINITY);
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"inf\""));
        let back: GuidanceParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<GuidanceParams>(r#"{"lambda":1,"zeta":0,"eta":2,"alpha":1.5,"x":1}"#).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let (p, q) = decompose_residual(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert_eq!((p, q), (v(&[1.0, 0.0]), v(&[0.0, 1.0])));

        let d = v(&[0.3, -1.2, 2.0]);
        let r = &d * 2.0;
        let (p, q) = decompose_residual(&r, &d).unwrap();
        assert!((p - &r).amax() < 1e-15);
        assert!(q.amax() < 1e-15);

        let (p, q) = decompose_residual(&v(&[4.0, 5.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!((p, q), (v(&[0.0, 0.0]), v(&[4.0, 5.0])));
    }

    #[test]
    fn orthogonal_error_examples() {
        let xs = v(&[0.5, -0.5]);
        assert_eq!(orthogonal_error(&v(&[1.5, 0.5]), &xs, &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(orthogonal_error(&xs, &xs, &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert!(orthogonal_error(&v(&[2.5, 3.5]), &xs, &v(&[1.0, 2.0])).unwrap() < 1e-15);
        assert_eq!(orthogonal_error(&v(&[3.5, 3.5]), &xs, &v(&[0.0, 0.0])).unwrap(), 5.0);
    }

    fn linear_pair() -> (impl Operator, impl Operator) {
        let s = FnOperator::new("s", 2, |x: &DVector<f64>| Ok(v(&[0.5 * x[0] + 1.0, 0.2 * x[1]])));
        let d = FnOperator::new("d", 2, |x: &DVector<f64>| Ok(v(&[0.9 * x[0] + 0.2, 0.6 * x[1] - 0.8 * x[0] + 1.6])));
        (s, d)
    }

    #[test]
    fn common_fixed_point_is_preserved() {
        // Both maps fix (2, 0).
        let (s, d) = linear_pair();
        let xs = v(&[2.0, 0.0]);
        for p in [params(10.0, 0.0, 15.0), params(3.0, 1.0, f64::INFINITY), params(7.0, 0.4, 0.1)] {
            assert_eq!(gag_step(&s, &d, &xs, &p).unwrap(), xs);
        }
    }

    #[test]
    fn zero_lambda_is_sparse_step() {
        let (s, d) = linear_pair();
        let x = v(&[0.3, -4.0]);
        assert_eq!(gag_step(&s, &d, &x, &params(0.0, 0.3, 2.0)).unwrap(), s.apply(&x).unwrap());
    }

    #[test]
    fn rescale_caps_guidance_norm() {
        let s = FnOperator::new("s", 2, |_: &DVector<f64>| Ok(v(&[30.0, 0.0])));
        let d = FnOperator::new("d", 2, |_: &DVector<f64>| Ok(v(&[0.0, 0.0])));
        let step = gag_step_detailed(&s, &d, &v(&[0.0, 0.0]), &params(1.0, 0.0, 15.0)).unwrap();
        assert_eq!(step.guidance_norm(), 15.0);
        assert_eq!(step.next, v(&[45.0, 0.0]));
    }

    #[test]
    fn full_residual_without_cap_is_plain_extrapolation() {
        let (s, d) = linear_pair();
        let x = v(&[1.3, -0.7]);
        let lambda = 2.5;
        let ts = s.apply(&x).unwrap();
        let td = d.apply(&x).unwrap();
        let expected = &ts + (&ts - &td) * lambda;
        assert_eq!(gag_step(&s, &d, &x, &params(lambda, 1.0, f64::INFINITY)).unwrap(), expected);
    }

    #[test]
    fn zero_sparse_output_suppresses_everything_at_zeta_zero() {
        let s = FnOperator::new("s", 2, |_: &DVector<f64>| Ok(v(&[0.0, 0.0])));
        let d = FnOperator::new("d", 2, |_: &DVector<f64>| Ok(v(&[1.0, 1.0])));
        let out = gag_step(&s, &d, &v(&[0.0, 0.0]), &params(5.0, 0.0, 15.0)).unwrap();
        assert_eq!(out, v(&[0.0, 0.0]));
    }

    #[test]
    fn gag_iterate_at_fixed_point_has_zero_orthogonal_error() {
        let (s, d) = linear_pair();
        let xs = v(&[2.0, 0.0]);
        let t = gag_iterate(&s, &d, &xs, &GuidanceParams::default(), Some(&xs), 1e-12, 10).unwrap();
        assert!(t.converged);
        assert_eq!(t.ortho_errors.unwrap(), vec![0.0]);
    }

    #[test]
    fn synthetic_testbed_validates() {
        let g = v(&[1.0, 0.0, 0.0]);
        assert!(SyntheticWeakContraction::new(1.0, 0.05, &g).is_err());
        assert!(SyntheticWeakContraction::new(0.9, 0.2, &g).is_err());
        assert!(SyntheticWeakContraction::new(0.9, 0.05, &v(&[0.0, 0.0, 0.0])).is_err());
        assert!(SyntheticWeakContraction::new(0.9, 0.05, &v(&[1.0])).is_err());
        let tb = SyntheticWeakContraction::new(0.9, 0.05, &v(&[0.0, 2.0])).unwrap();
        assert_eq!(tb.guidance_direction, v(&[0.0, 1.0]));
        assert_eq!(tb.fixed_point, v(&[0.0, 0.0]));
        assert!(tb.clone().with_dense_gain(0.9).is_err());
        assert!((tb.max_lambda() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn synthetic_maps_share_the_origin() {
        let tb = SyntheticWeakContraction::new(0.9, 0.05, &v(&[1.0, 2.0, 0.0])).unwrap().with_kick(0.5).unwrap();
        let zero = v(&[0.0, 0.0, 0.0]);
        assert_eq!(tb.sparse_operator().apply(&zero).unwrap(), zero);
        assert_eq!(tb.dense_operator().apply(&zero).unwrap(), zero);
        // The sparse map is ρ times a rotation, so it scales norms by ρ.
        let x = v(&[0.3, -1.0, 2.0]);
        let y = tb.sparse_operator().apply(&x).unwrap();
        assert!((y.norm() - 0.85 * x.norm()).abs() < 1e-14);
    }

    #[test]
    fn synthetic_assumption_holds_along_zeta_zero_steps() {
        let tb = SyntheticWeakContraction::new(0.9, 0.05, &v(&[1.0, 1.0, 0.0, 0.0]))
            .unwrap()
            .with_kick(0.5)
            .unwrap();
        let x = v(&[0.4, 1.9, -0.3, 0.6]);
        for lambda in [0.0, 1.0, 5.0, 10.0, 40.0] {
            let (lhs, rhs) = tb.assumption_sides(&x, &params(lambda, 0.0, 15.0)).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-12), "λ={lambda}: {lhs} > {rhs}");
            let expected = (1.0 - lambda * 0.05).abs() * rhs;
            assert!((lhs - expected).abs() < 1e-12 * rhs.max(1.0), "λ={lambda}: {lhs} vs {expected}");
        }
        // Past 2/(κ − 1) the step overshoots and the inequality breaks.
        let (lhs, rhs) = tb.assumption_sides(&x, &params(50.0, 0.0, f64::INFINITY)).unwrap();
        assert!(lhs > rhs);
    }

    #[test]
    fn kick_passes_through_at_zeta_one() {
        let tb = SyntheticWeakContraction::new(0.9, 0.05, &v(&[1.0, 0.0, 0.0]))
            .unwrap()
            .with_kick(0.5)
            .unwrap();
        let x = v(&[0.4, 1.9, -0.3]);
        let (lhs, rhs) = tb.assumption_sides(&x, &params(10.0, 1.0, f64::INFINITY)).unwrap();
        assert!(lhs > rhs);
    }

    #[test]
    fn orthogonal_plane_is_orthonormal() {
        let g = v(&[0.6, 0.0, 0.8, 0.0]);
        let (a, b) = orthogonal_plane(&g);
        for (x, y, want) in [(&a, &a, 1.0), (&b, &b, 1.0), (&a, &b, 0.0), (&a, &g, 0.0), (&b, &g, 0.0)] {
            assert!((x.dot(y) - want).abs() < 1e-14);
        }
    }
}
