//! Fixed-point drivers: Picard, Krasnosel'skii–Mann and Anderson.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};

/// A deterministic self-map on `R^d`.
pub trait Operator: Sync {
    fn dim(&self) -> usize;

    fn label(&self) -> &str {
        "operator"
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

impl<T: Operator + ?Sized> Operator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn label(&self) -> &str {
        (**self).label()
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).apply(x)
    }
}

/// Wraps a closure as an [`Operator`], checking the input dimension.
pub struct FnOperator<F> {
    label: String,
    dim: usize,
    f: F,
}

impl<F> FnOperator<F>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    pub fn new(label: impl Into<String>, dim: usize, f: F) -> Self {
        FnOperator {
            label: label.into(),
            dim,
            f,
        }
    }
}

impl<F> Operator for FnOperator<F>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim(self.dim, x.len())?;
        let y = (self.f)(x)?;
        ensure_dim(self.dim, y.len())?;
        Ok(y)
    }
}

/// Per-step record of a fixed-point run.
///
/// `states[k]` is the k-th iterate and `residual_norms[k]` is
/// `‖F(x_k) − x_k‖` for the driving map. The run stopped at
/// `states[iterations_used]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub states: Vec<DVector<f64>>,
    pub residual_norms: Vec<f64>,
    pub energies: Option<Vec<f64>>,
    pub ortho_errors: Option<Vec<f64>>,
    /// Norm of the added guidance term per step (GAG runs only).
    pub guidance_norms: Option<Vec<f64>>,
    /// Affine weights used by each accelerated Anderson step.
    pub anderson_weights: Vec<Vec<f64>>,
    /// Steps where the Anderson least-squares system was singular and a
    /// plain Picard step was taken instead.
    pub picard_fallbacks: Vec<usize>,
    pub converged: bool,
    pub iterations_used: usize,
}

impl IterationTrace {
    fn start(x0: &DVector<f64>) -> Self {
        IterationTrace {
            states: vec![x0.clone()],
            ..Default::default()
        }
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trace always holds x0")
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.residual_norms.last().copied()
    }

    /// Attaches `E(x_k)` for every recorded state.
    pub fn with_energies<E>(mut self, energy: E) -> Result<Self>
    where
        E: Fn(&DVector<f64>) -> Result<f64>,
    {
        let values = self.states.iter().map(&energy).collect::<Result<Vec<_>>>()?;
        self.energies = Some(values);
        Ok(self)
    }

    fn finish(mut self, converged: bool) -> Self {
        self.converged = converged;
        self.iterations_used = self.states.len() - 1;
        self
    }
}

pub(crate) fn check_run(op_dim: usize, x0: &DVector<f64>, tol: f64, max_iter: usize) -> Result<()> {
    ensure_dim(op_dim, x0.len())?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::Domain("max_iter must be at least 1".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial state is not finite".into()));
    }
    Ok(())
}

pub(crate) fn diverged(trace: IterationTrace) -> Error {
    Error::Divergence {
        trace: Box::new(trace.finish(false)),
    }
}

/// Euclidean norm that stays finite for finite vectors near `f64::MAX`.
pub(crate) fn safe_norm(v: &DVector<f64>) -> f64 {
    let scale = v.amax();
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * (v / scale).norm()
}

fn is_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// `x_{k+1} = F(x_k)` until `‖F(x_k) − x_k‖ ≤ tol` or `max_iter` updates.
pub fn picard_iterate<F: Operator>(
    f: &F,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<IterationTrace> {
    km_iterate(f, x0, 1.0, tol, max_iter)
}

/// Relaxed iteration `x_{k+1} = (1−θ)x_k + θF(x_k)`, `0 < θ ≤ 1`.
pub fn km_iterate<F: Operator>(
    f: &F,
    x0: &DVector<f64>,
    relax: f64,
    tol: f64,
    max_iter: usize,
) -> Result<IterationTrace> {
    check_run(f.dim(), x0, tol, max_iter)?;
    if !(relax > 0.0 && relax <= 1.0) {
        return Err(Error::Domain(format!("relaxation must lie in (0, 1], got {relax}")));
    }
    let mut trace = IterationTrace::start(x0);
    let mut x = x0.clone();
    loop {
        let fx = f.apply(&x)?;
        if !is_finite(&fx) {
            return Err(diverged(trace));
        }
        let res = safe_norm(&(&fx - &x));
        if !res.is_finite() {
            return Err(diverged(trace));
        }
        trace.residual_norms.push(res);
        if res <= tol {
            return Ok(trace.finish(true));
        }
        if trace.states.len() > max_iter {
            return Ok(trace.finish(false));
        }
        x = if relax == 1.0 {
            fx
        } else {
            x * (1.0 - relax) + fx * relax
        };
        if !is_finite(&x) {
            trace.states.push(x);
            return Err(diverged(trace));
        }
        trace.states.push(x.clone());
    }
}

/// How Anderson picks its combination weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AndersonWeights {
    /// Constrained least squares on the residual history.
    LeastSquares,
    /// `x_{k+1} = F(x_k) + ω(F(x_k) − F(x_{k−1}))`; requires memory 1.
    Fixed(f64),
}

/// Relative Tikhonov damping on the Anderson normal equations.
pub const ANDERSON_DAMPING: f64 = 1e-10;

/// Anderson acceleration with `memory` past iterates.
///
/// The first `memory` updates are plain Picard steps that seed the history.
/// After that each update is `Σ ω_i F(x_{k−m+i})` with `Σ ω_i = 1`.
pub fn anderson_iterate<F: Operator>(
    f: &F,
    x0: &DVector<f64>,
    memory: usize,
    weights: AndersonWeights,
    tol: f64,
    max_iter: usize,
) -> Result<IterationTrace> {
    check_run(f.dim(), x0, tol, max_iter)?;
    if memory == 0 {
        return Err(Error::Domain("Anderson memory must be at least 1".into()));
    }
    if let AndersonWeights::Fixed(omega) = weights {
        if memory != 1 {
            return Err(Error::Domain("a fixed extrapolation weight needs memory 1".into()));
        }
        if !omega.is_finite() {
            return Err(Error::Domain(format!("omega must be finite, got {omega}")));
        }
    }

    let mut trace = IterationTrace::start(x0);
    // (F(x_i), g(x_i)) for the last memory+1 iterates, oldest first.
    let mut history: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(memory + 1);
    let mut x = x0.clone();
    loop {
        let k = trace.states.len() - 1;
        let fx = f.apply(&x)?;
        if !is_finite(&fx) {
            return Err(diverged(trace));
        }
        let g = &fx - &x;
        let res = safe_norm(&g);
        if !res.is_finite() {
            return Err(diverged(trace));
        }
        trace.residual_norms.push(res);
        if res <= tol {
            return Ok(trace.finish(true));
        }
        if k >= max_iter {
            return Ok(trace.finish(false));
        }
        if history.len() == memory + 1 {
            history.remove(0);
        }
        history.push((fx, g));

        x = if k < memory {
            history.last().unwrap().0.clone()
        } else {
            let omega = match weights {
                AndersonWeights::Fixed(w) => Some(vec![-w, 1.0 + w]),
                AndersonWeights::LeastSquares => {
                    let residuals: Vec<&DVector<f64>> = history.iter().map(|(_, g)| g).collect();
                    least_squares_weights(&residuals)
                }
            };
            match omega {
                Some(omega) => {
                    let mut next = DVector::zeros(x.len());
                    for (w, (fx_i, _)) in omega.iter().zip(&history) {
                        next.axpy(*w, fx_i, 1.0);
                    }
                    trace.anderson_weights.push(omega);
                    next
                }
                None => {
                    trace.picard_fallbacks.push(k);
                    history.last().unwrap().0.clone()
                }
            }
        };
        if !is_finite(&x) {
            trace.states.push(x);
            return Err(diverged(trace));
        }
        trace.states.push(x.clone());
    }
}

/// Solves `min ‖Σ ω_i g_i‖` subject to `Σ ω_i = 1`.
///
/// With Gram matrix `G = [⟨g_i, g_j⟩]` the minimiser is
/// `ω ∝ (G + δI)⁻¹ 1`. Columns are scaled by the largest residual norm first
/// so that `δ` acts relative to the residual scale. Returns `None` if the
/// damped system is still singular.
pub fn least_squares_weights(residuals: &[&DVector<f64>]) -> Option<Vec<f64>> {
    let n = residuals.len();
    let scale = residuals.iter().map(|g| g.norm()).fold(0.0, f64::max);
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = residuals[i].dot(residuals[j]) / (scale * scale);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    for i in 0..n {
        gram[(i, i)] += ANDERSON_DAMPING;
    }
    let y = gram.lu().solve(&DVector::from_element(n, 1.0))?;
    let total: f64 = y.iter().sum();
    if !(total.is_finite() && total.abs() > f64::EPSILON) {
        return None;
    }
    let mut omega: Vec<f64> = y.iter().map(|v| v / total).collect();
    if omega.iter().any(|w| !w.is_finite()) {
        return None;
    }
    // Push the rounding error of the normalisation onto the newest weight.
    let drift: f64 = omega.iter().sum::<f64>() - 1.0;
    omega[n - 1] -= drift;
    Some(omega)
}
