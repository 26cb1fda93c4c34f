//! Batched attention forms of the retrieval dynamics.
//!
//! Each query row is one Hopfield state: row `i` of the output is
//! `Vᵀ α-entmax(K q_i / √d)`, with `d` the key dimension. Rows never
//! interact, so every kernel here is a row-wise map.

use nalgebra::{DMatrix, DVector};

use crate::entmax::{self, Alpha, Logits, ProbVector, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::guidance::{guided_update, GuidanceParams};

/// Query, key and value matrices, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBatch {
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl AttentionBatch {
    pub fn new(q: DMatrix<f64>, k: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if q.nrows() == 0 || k.nrows() == 0 || q.ncols() == 0 || v.ncols() == 0 {
            return Err(Error::InvalidInput("attention matrices must be non-empty".into()));
        }
        if q.ncols() != k.ncols() {
            return Err(Error::InvalidInput(format!(
                "queries have width {} but keys have width {}",
                q.ncols(),
                k.ncols()
            )));
        }
        if k.nrows() != v.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} keys but {} values",
                k.nrows(),
                v.nrows()
            )));
        }
        if q.iter().chain(k.iter()).chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("attention inputs must be finite".into()));
        }
        Ok(AttentionBatch { q, k, v })
    }

    pub fn queries(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn keys(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Key dimension `d`.
    pub fn key_dim(&self) -> usize {
        self.k.ncols()
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.key_dim() as f64).sqrt()
    }

    /// Attention weights for query row `i`.
    pub fn row_weights(&self, i: usize, alpha: Alpha) -> Result<ProbVector> {
        let scores = &self.k * self.q.row(i).transpose();
        let z = Logits::new(scores.data.into())?;
        entmax::alpha_entmax(&z, alpha, self.scale(), DEFAULT_TOL)
    }

    /// Output row `i` as a column vector.
    pub fn row_output(&self, i: usize, alpha: Alpha) -> Result<(DVector<f64>, ProbVector)> {
        let p = self.row_weights(i, alpha)?;
        let out = self.v.tr_mul(&DVector::from_column_slice(&p));
        Ok((out, p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub rows: DMatrix<f64>,
    pub weights: Option<Vec<ProbVector>>,
}

impl AttentionOutput {
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.rows.row(i).transpose()
    }
}

fn assemble(rows: Vec<DVector<f64>>, width: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), width);
    for (i, r) in rows.iter().enumerate() {
        out.set_row(i, &r.transpose());
    }
    out
}

/// `α-entmax(QKᵀ/√d)·V`.
pub fn attention(batch: &AttentionBatch, alpha: Alpha) -> Result<AttentionOutput> {
    let n = batch.q.nrows();
    let mut rows = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let (out, p) = batch.row_output(i, alpha)?;
        rows.push(out);
        weights.push(p);
    }
    Ok(AttentionOutput {
        rows: assemble(rows, batch.v.ncols()),
        weights: Some(weights),
    })
}

/// Sparse attention extrapolated away from dense attention:
/// `At_α + λ(At_α − At_1)`.
pub fn pladis_extrapolate(batch: &AttentionBatch, alpha: Alpha, lambda: f64) -> Result<AttentionOutput> {
    if !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda must be finite, got {lambda}")));
    }
    let n = batch.q.nrows();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let (sparse, _) = batch.row_output(i, alpha)?;
        let (dense, _) = batch.row_output(i, Alpha::SOFTMAX)?;
        rows.push(&sparse + (&sparse - &dense) * lambda);
    }
    Ok(AttentionOutput {
        rows: assemble(rows, batch.v.ncols()),
        weights: None,
    })
}

/// Row-wise GAG: each row's sparse/dense residual is split against the
/// sparse row, filtered by ζ, capped at η and scaled by λ.
pub fn gag_attention(batch: &AttentionBatch, params: &GuidanceParams) -> Result<AttentionOutput> {
    params.validate()?;
    let n = batch.q.nrows();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let (sparse, _) = batch.row_output(i, params.alpha)?;
        let (dense, _) = batch.row_output(i, Alpha::SOFTMAX)?;
        let (next, _) = guided_update(&sparse, &dense, params)?;
        rows.push(next);
    }
    Ok(AttentionOutput {
        rows: assemble(rows, batch.v.ncols()),
        weights: None,
    })
}
