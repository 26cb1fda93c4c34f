use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::spec::{ExperimentKind, ExperimentSpec};
use crate::error::{Error, Result};
use crate::fixed_point::IterationTrace;
use crate::guidance::extended_f64;

/// One table cell. Non-finite floats travel through JSON as `"inf"`,
/// `"-inf"` or `"nan"`.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Cell::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Same value, with NaN equal to NaN.
    pub fn same(&self, other: &Cell) -> bool {
        match (self, other) {
            (Cell::Float(a), Cell::Float(b)) => a == b || (a.is_nan() && b.is_nan()),
            _ => self == other,
        }
    }

    fn csv_field(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) if f.is_finite() => format!("{f:.16e}"),
            Cell::Float(f) if f.is_nan() => "nan".into(),
            Cell::Float(f) if *f > 0.0 => "inf".into(),
            Cell::Float(_) => "-inf".into(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Int(i) => s.serialize_i64(*i),
            Cell::Float(f) => extended_f64::serialize(f, s),
            Cell::Bool(b) => s.serialize_bool(*b),
            Cell::Text(t) => s.serialize_str(t),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct CellVisitor;

        impl Visitor<'_> for CellVisitor {
            type Value = Cell;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number, boolean or string")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Cell, E> {
                Ok(Cell::Int(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Cell, E> {
                i64::try_from(v).map(Cell::Int).map_err(E::custom)
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Cell, E> {
                Ok(Cell::Float(v))
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> std::result::Result<Cell, E> {
                Ok(Cell::Bool(v))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Cell, E> {
                Ok(match v {
                    "inf" => Cell::Float(f64::INFINITY),
                    "-inf" => Cell::Float(f64::NEG_INFINITY),
                    "nan" => Cell::Float(f64::NAN),
                    _ => Cell::Text(v.to_string()),
                })
            }
        }

        d.deserialize_any(CellVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub version: String,
    pub spec: ExperimentSpec,
}

/// Aggregate of one metric over the rows of a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: BTreeMap<String, Cell>,
    pub metric: String,
    #[serde(with = "extended_f64")]
    pub mean: f64,
    #[serde(with = "extended_f64")]
    pub max: f64,
    pub count: usize,
}

/// Least-squares fits of mean error against noise level for one α.
///
/// `exp_*` regresses `ln err` on `σ`; `poly_*` regresses `ln err` on `ln σ`.
/// Only points with `σ > 0` and positive mean error enter the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub alpha: f64,
    #[serde(with = "extended_f64")]
    pub exp_slope: f64,
    #[serde(with = "extended_f64")]
    pub exp_r2: f64,
    #[serde(with = "extended_f64")]
    pub poly_slope: f64,
    #[serde(with = "extended_f64")]
    pub poly_r2: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metadata: Metadata,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub summary: Vec<SummaryRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub growth: Vec<GrowthFit>,
    /// α values ordered from the largest to the smallest overall mean error.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub error_order: Vec<f64>,
}

impl Report {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// All values of column `name`.
    pub fn column_values(&self, name: &str) -> Option<Vec<&Cell>> {
        let j = self.column(name)?;
        Some(self.rows.iter().map(|r| &r[j]).collect())
    }

    /// The summary entry whose group contains every `(key, value)` pair.
    pub fn summary_for(&self, metric: &str, filter: &[(&str, Cell)]) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| {
            s.metric == metric
                && filter
                    .iter()
                    .all(|(k, v)| s.group.get(*k).is_some_and(|c| c.same(v)))
        })
    }

    /// Structural equality with NaN cells treated as equal.
    pub fn same(&self, other: &Report) -> bool {
        let cells_eq = self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same(y)));
        let f_eq = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        let summary_eq = self.summary.len() == other.summary.len()
            && self.summary.iter().zip(&other.summary).all(|(a, b)| {
                a.metric == b.metric
                    && a.count == b.count
                    && f_eq(a.mean, b.mean)
                    && f_eq(a.max, b.max)
                    && a.group.len() == b.group.len()
                    && a.group.iter().zip(&b.group).all(|((ka, va), (kb, vb))| ka == kb && va.same(vb))
            });
        let growth_eq = self.growth.len() == other.growth.len()
            && self.growth.iter().zip(&other.growth).all(|(a, b)| {
                a.alpha == b.alpha
                    && a.points == b.points
                    && f_eq(a.exp_slope, b.exp_slope)
                    && f_eq(a.exp_r2, b.exp_r2)
                    && f_eq(a.poly_slope, b.poly_slope)
                    && f_eq(a.poly_r2, b.poly_r2)
            });
        self.metadata == other.metadata
            && self.columns == other.columns
            && self.error_order == other.error_order
            && cells_eq
            && summary_eq
            && growth_eq
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for row in &self.rows {
            out.write_record(row.iter().map(Cell::csv_field))?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidInput(format!("unknown report format {other:?}"))),
        }
    }
}

pub fn write_report(report: &Report, path: &Path, format: ReportFormat) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    match format {
        ReportFormat::Csv => report.write_csv(&mut w)?,
        ReportFormat::Json => {
            w.write_all(report.to_json()?.as_bytes()).map_err(|e| Error::io(path, e))?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-step trace as CSV: `k,residual,energy,u_t`. Missing series leave
/// their column empty.
pub fn write_trace_csv<W: Write>(trace: &IterationTrace, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k", "residual", "energy", "u_t"])?;
    let opt = |v: Option<&Vec<f64>>, k: usize| {
        v.and_then(|s| s.get(k))
            .map(|x| Cell::Float(*x).csv_field())
            .unwrap_or_default()
    };
    for k in 0..trace.states.len() {
        out.write_record([
            k.to_string(),
            opt(Some(&trace.residual_norms), k),
            opt(trace.energies.as_ref(), k),
            opt(trace.ortho_errors.as_ref(), k),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
