use serde::{Deserialize, Serialize};

use crate::entmax::Alpha;
use crate::error::{Error, Result};
use crate::guidance::GuidanceParams;
use crate::hopfield::default_beta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    NoiseRobustness,
    ConvergenceBench,
    GuidanceSweep,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::NoiseRobustness => "noise_robustness",
            ExperimentKind::ConvergenceBench => "convergence_bench",
            ExperimentKind::GuidanceSweep => "guidance_sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternMode {
    #[default]
    Gaussian,
    UnitSphere,
}

/// A complete, seeded description of one experiment.
///
/// Every field except `kind` has a default; grids that the chosen kind does
/// not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    /// `(d, M)`: pattern dimension and pattern count.
    #[serde(default = "defaults::dims")]
    pub dims: (usize, usize),
    #[serde(default)]
    pub pattern_mode: PatternMode,
    /// Inverse temperature; `1/√d` when absent.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "defaults::alphas")]
    pub alphas: Vec<Alpha>,
    #[serde(default = "defaults::sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "defaults::lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    #[serde(default = "defaults::tol")]
    pub tol: f64,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default = "defaults::km_relax")]
    pub km_relax: f64,
    #[serde(default = "defaults::anderson_memory")]
    pub anderson_memory: usize,
    #[serde(default = "defaults::anderson_omega")]
    pub anderson_omega: f64,
    #[serde(default)]
    pub guidance: GuidanceParams,
}

mod defaults {
    use super::*;

    pub fn seed() -> u64 {
        7
    }
    pub fn dims() -> (usize, usize) {
        (32, 8)
    }
    pub fn alphas() -> Vec<Alpha> {
        vec![Alpha::SOFTMAX, Alpha::ENTMAX15, Alpha::SPARSEMAX]
    }
    pub fn sigmas() -> Vec<f64> {
        vec![0.0, 0.1, 0.2, 0.5, 1.0, 2.0]
    }
    pub fn lambdas() -> Vec<f64> {
        vec![0.0, 1.0, 5.0, 10.0]
    }
    pub fn trials() -> usize {
        32
    }
    pub fn tol() -> f64 {
        1e-8
    }
    pub fn max_iter() -> usize {
        2000
    }
    pub fn km_relax() -> f64 {
        0.5
    }
    pub fn anderson_memory() -> usize {
        5
    }
    pub fn anderson_omega() -> f64 {
        1.0
    }
}

impl ExperimentSpec {
    /// The default spec for `kind`.
    pub fn default_for(kind: ExperimentKind) -> Self {
        ExperimentSpec {
            kind,
            seed: defaults::seed(),
            dims: defaults::dims(),
            pattern_mode: PatternMode::default(),
            beta: None,
            alphas: defaults::alphas(),
            sigmas: defaults::sigmas(),
            lambdas: defaults::lambdas(),
            trials: defaults::trials(),
            tol: defaults::tol(),
            max_iter: defaults::max_iter(),
            km_relax: defaults::km_relax(),
            anderson_memory: defaults::anderson_memory(),
            anderson_omega: defaults::anderson_omega(),
            guidance: GuidanceParams::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn d(&self) -> usize {
        self.dims.0
    }

    pub fn m(&self) -> usize {
        self.dims.1
    }

    pub fn effective_beta(&self) -> f64 {
        self.beta.unwrap_or_else(|| default_beta(self.d()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.d() == 0 || self.m() == 0 {
            return bad(format!("dims must be positive, got {:?}", self.dims));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if let Some(b) = self.beta {
            if !(b.is_finite() && b > 0.0) {
                return bad(format!("beta must be positive, got {b}"));
            }
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.km_relax > 0.0 && self.km_relax <= 1.0) {
            return bad(format!("km_relax must lie in (0, 1], got {}", self.km_relax));
        }
        if self.anderson_memory == 0 {
            return bad("anderson_memory must be at least 1".into());
        }
        if !self.anderson_omega.is_finite() {
            return bad("anderson_omega must be finite".into());
        }
        self.guidance.validate()?;
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigmas must be finite and nonnegative".into());
        }
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("lambdas must be finite and nonnegative".into());
        }
        match self.kind {
            ExperimentKind::NoiseRobustness => {
                if self.alphas.is_empty() || self.sigmas.is_empty() {
                    return bad("noise_robustness needs non-empty alphas and sigmas".into());
                }
            }
            ExperimentKind::GuidanceSweep => {
                if self.lambdas.is_empty() {
                    return bad("guidance_sweep needs a non-empty lambda grid".into());
                }
                if self.d() < 2 {
                    return bad("guidance_sweep needs dimension at least 2".into());
                }
            }
            ExperimentKind::ConvergenceBench => {}
        }
        Ok(())
    }
}
