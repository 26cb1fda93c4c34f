//! JSON matrix format: `{"rows": R, "cols": C, "data": [row-major]}`.
//! Vectors use `rows = 1`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in m.row_iter() {
            data.extend(r.iter());
        }
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        MatrixJson {
            rows: 1,
            cols: v.len(),
            data: v.iter().copied().collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.rows * self.cols != self.data.len() {
            return Err(Error::InvalidInput(format!(
                "matrix declares {}×{} but holds {} numbers",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }

    /// Accepts a `1 × n` row or an `n × 1` column.
    pub fn to_vector(&self) -> Result<DVector<f64>> {
        let m = self.to_matrix()?;
        if m.nrows() == 1 {
            Ok(m.row(0).transpose())
        } else if m.ncols() == 1 {
            Ok(m.column(0).into_owned())
        } else {
            Err(Error::InvalidInput(format!(
                "expected a vector, got a {}×{} matrix",
                self.rows, self.cols
            )))
        }
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    read_json::<MatrixJson>(path)?.to_matrix()
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    read_json::<MatrixJson>(path)?.to_vector()
}
