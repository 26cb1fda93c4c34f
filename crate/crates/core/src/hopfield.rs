//! Dense and sparse Hopfield retrieval: energies, the one-step update
//! `T_α(x) = Ξ α-entmax(βΞᵀx)`, and retrieval-error bounds.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::entmax::{self, Alpha, Logits, ProbVector, DEFAULT_TOL};
use crate::error::{ensure_dim, Error, Result};

/// Stored patterns as the columns of a `d × M` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternMatrix {
    xi: DMatrix<f64>,
    max_norm: f64,
}

impl PatternMatrix {
    pub fn new(xi: DMatrix<f64>) -> Result<Self> {
        if xi.nrows() == 0 || xi.ncols() == 0 {
            return Err(Error::InvalidInput(
                "pattern matrix needs d ≥ 1 and M ≥ 1".into(),
            ));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("pattern matrix has non-finite entries".into()));
        }
        let max_norm = xi
            .column_iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        Ok(PatternMatrix { xi, max_norm })
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidInput("no patterns given".into()));
        }
        let d = columns[0].len();
        for c in columns {
            ensure_dim(d, c.len())?;
        }
        Self::new(DMatrix::from_columns(columns))
    }

    /// Pattern dimension `d`.
    pub fn dim(&self) -> usize {
        self.xi.nrows()
    }

    /// Number of stored patterns `M`.
    pub fn count(&self) -> usize {
        self.xi.ncols()
    }

    /// `m = max_ν ‖ξ_ν‖`.
    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.xi
    }

    pub fn pattern(&self, mu: usize) -> Result<DVector<f64>> {
        if mu >= self.count() {
            return Err(Error::IndexOutOfRange {
                index: mu,
                len: self.count(),
            });
        }
        Ok(self.xi.column(mu).into_owned())
    }

    /// Similarities `Ξᵀx`.
    pub fn scores(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim(self.dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("query has non-finite entries".into()));
        }
        Ok(self.xi.tr_mul(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HopfieldConfig {
    pub alpha: Alpha,
    pub beta: f64,
}

impl HopfieldConfig {
    pub fn new(alpha: Alpha, beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        Ok(HopfieldConfig { alpha, beta })
    }

    /// `β = 1/√d`.
    pub fn with_default_beta(alpha: Alpha, d: usize) -> Self {
        HopfieldConfig {
            alpha,
            beta: default_beta(d),
        }
    }
}

pub fn default_beta(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorBoundReport {
    pub bound: f64,
    pub measured_error: f64,
    pub kappa: usize,
    /// `⟨ξ_μ, x⟩ − max_{ν≠μ} ⟨ξ_ν, x⟩`
    pub separation: f64,
}

fn logits(scores: DVector<f64>) -> Result<Logits> {
    Logits::new(scores.data.into())
}

/// Retrieval weights `α-entmax(βΞᵀx)`.
pub fn retrieval_weights(
    x: &DVector<f64>,
    xi: &PatternMatrix,
    cfg: &HopfieldConfig,
) -> Result<ProbVector> {
    let z = logits(xi.scores(x)?)?;
    entmax::alpha_entmax(&z, cfg.alpha, cfg.beta, DEFAULT_TOL)
}

/// One retrieval step, `Ξ α-entmax(βΞᵀx)`.
pub fn retrieve(x: &DVector<f64>, xi: &PatternMatrix, cfg: &HopfieldConfig) -> Result<DVector<f64>> {
    let p = retrieval_weights(x, xi, cfg)?;
    Ok(xi.matrix() * DVector::from_column_slice(&p))
}

/// `−lse(β, Ξᵀx) + ½‖x‖²` at α = 1, and `−Ψ*_α(β, Ξᵀx) + ½‖x‖²` otherwise.
pub fn energy(x: &DVector<f64>, xi: &PatternMatrix, cfg: &HopfieldConfig) -> Result<f64> {
    let z = logits(xi.scores(x)?)?;
    let conj = if cfg.alpha == Alpha::SOFTMAX {
        entmax::lse(&z, cfg.beta)?
    } else {
        entmax::tsallis_conjugate(&z, cfg.alpha, cfg.beta)?
    };
    Ok(-conj + 0.5 * x.norm_squared())
}

/// Gap between the target pattern's similarity and the best competitor.
///
/// With a single stored pattern there is no competitor and the gap is
/// `+∞`.
pub fn pattern_separation(x: &DVector<f64>, xi: &PatternMatrix, mu: usize) -> Result<f64> {
    if mu >= xi.count() {
        return Err(Error::IndexOutOfRange {
            index: mu,
            len: xi.count(),
        });
    }
    let z = xi.scores(x)?;
    let rival = z
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != mu)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(z[mu] - rival)
}

/// Case-appropriate retrieval error bound together with the measured error
/// `‖T_α(x) − ξ_μ‖`.
///
/// * α = 1: `2m(M−1)·exp(−β·gap)`
/// * 1 < α < 2: `m + mκ[(α−1)β(max_ν⟨ξ_ν,x⟩ − [Ξᵀx]_(κ+1))]^{1/(α−1)}`,
///   with `[Ξᵀx]_(M+1) := [Ξᵀx]_(M) − M^{1−α}/(α−1)`
/// * α = 2: `m + mβ[κ(max_ν⟨ξ_ν,x⟩ − [Ξᵀx]_(κ)) + 1/β]`
///
/// `[·]_(k)` is the k-th largest similarity.
pub fn retrieval_error_bound(
    x: &DVector<f64>,
    xi: &PatternMatrix,
    mu: usize,
    cfg: &HopfieldConfig,
) -> Result<ErrorBoundReport> {
    let separation = pattern_separation(x, xi, mu)?;
    let scores = xi.scores(x)?;
    let z = logits(scores.clone())?;
    let (p, report) = entmax::alpha_entmax_with_threshold(&z, cfg.alpha, cfg.beta, DEFAULT_TOL)?;
    let retrieved = xi.matrix() * DVector::from_column_slice(&p);
    let measured_error = (retrieved - xi.pattern(mu)?).norm();

    let m = xi.max_norm();
    let count = xi.count();
    let kappa = report.kappa;
    let a = cfg.alpha.get();
    let beta = cfg.beta;

    let mut sorted: Vec<f64> = scores.iter().copied().collect();
    sorted.sort_by(|u, v| v.total_cmp(u));
    let top = sorted[0];

    let bound = if a == 1.0 {
        if count == 1 {
            0.0
        } else {
            2.0 * m * (count - 1) as f64 * (-beta * separation).exp()
        }
    } else if a == 2.0 {
        m + m * beta * (kappa as f64 * (top - sorted[kappa - 1]) + 1.0 / beta)
    } else {
        let next = if kappa < count {
            sorted[kappa]
        } else {
            sorted[count - 1] - (count as f64).powf(1.0 - a) / (a - 1.0)
        };
        m + m * kappa as f64 * ((a - 1.0) * beta * (top - next)).powf(1.0 / (a - 1.0))
    };

    Ok(ErrorBoundReport {
        bound,
        measured_error,
        kappa,
        separation,
    })
}
