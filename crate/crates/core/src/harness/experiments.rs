//! The three seeded experiments. Trials run in parallel; rows come back in
//! grid order regardless of scheduling, so a fixed experiment always yields the
//! same report.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::report::{Cell, GrowthFit, Metadata, Report, SummaryRow};
use super::rng::{gaussian_matrix, gaussian_vector, gen_patterns, stream_rng, unit_vector};
use super::spec::{ExperimentKind, ExperimentSpec};
use crate::entmax::Alpha;
use crate::error::{Error, Result};
use crate::fixed_point::{
    anderson_iterate, km_iterate, picard_iterate, AndersonWeights, FnOperator, IterationTrace, Operator,
};
use crate::guidance::{gag_iterate, GuidanceParams, SyntheticWeakContraction};
use crate::hopfield::{self, HopfieldConfig, PatternMatrix};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "HOPGAG_THREADS";

/// Slack allowed when checking that `u_t` never increases.
pub const MONOTONE_SLACK: f64 = 1e-12;

/// Spectral radius of the linear contraction testbed.
pub const CONTRACTION_RADIUS: f64 = 0.95;

/// The dense partner of the linear testbed is the relaxed step
/// `x + θ(F(x) − x)` with this θ; it shares the fixed point of `F`.
pub const CONTRACTION_DENSE_RELAX: f64 = 0.95;

pub fn run(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    match spec.kind {
        ExperimentKind::NoiseRobustness => run_noise_robustness(spec),
        ExperimentKind::ConvergenceBench => run_convergence_bench(spec),
        ExperimentKind::GuidanceSweep => run_guidance_sweep(spec),
    }
}

/// Worker count from `HOPGAG_THREADS`; `None` lets rayon decide.
pub fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) if s.trim().is_empty() => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(Error::InvalidInput(format!("{THREADS_ENV} must be a thread count, got {s:?}"))),
        },
    }
}

fn par_map<T, R, F>(tasks: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    pool.install(|| tasks.par_iter().map(&f).collect())
}

fn metadata(spec: &ExperimentSpec) -> Metadata {
    Metadata {
        kind: spec.kind,
        seed: spec.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        spec: spec.clone(),
    }
}

fn columns(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Groups rows by the named key columns and summarises each metric column.
/// Groups appear in order of first occurrence.
fn summarise(columns: &[String], rows: &[Vec<Cell>], keys: &[&str], metrics: &[&str]) -> Vec<SummaryRow> {
    let idx = |name: &str| columns.iter().position(|c| c == name).expect("known column");
    let key_idx: Vec<usize> = keys.iter().map(|k| idx(k)).collect();
    let mut groups: Vec<(Vec<Cell>, Vec<&Vec<Cell>>)> = Vec::new();
    for row in rows {
        let key: Vec<Cell> = key_idx.iter().map(|&j| row[j].clone()).collect();
        match groups.iter_mut().find(|(k, _)| k.iter().zip(&key).all(|(a, b)| a.same(b))) {
            Some((_, members)) => members.push(row),
            None => groups.push((key, vec![row])),
        }
    }
    let mut out = Vec::new();
    for (key, members) in &groups {
        let group: BTreeMap<String, Cell> = keys.iter().map(|k| k.to_string()).zip(key.iter().cloned()).collect();
        for metric in metrics {
            let j = idx(metric);
            let values: Vec<f64> = members
                .iter()
                .map(|r| match &r[j] {
                    Cell::Bool(b) => f64::from(u8::from(*b)),
                    c => c.as_f64().unwrap_or(f64::NAN),
                })
                .collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let max = values.iter().copied().fold(f64::NEG_INFINITY, |a, b| if b.is_nan() { b } else { a.max(b) });
            out.push(SummaryRow {
                group: group.clone(),
                metric: metric.to_string(),
                mean,
                max,
                count: values.len(),
            });
        }
    }
    out
}

/// Slope and R² of the least-squares line through `(x, y)`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    if points.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

fn trial_pattern(t: usize, m: usize) -> usize {
    t % m
}

// ---------------------------------------------------------------------------
// noise robustness

struct NoiseTask {
    alpha: Alpha,
    sigma_idx: usize,
    sigma: f64,
    trial: usize,
}

pub fn run_noise_robustness(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    let patterns = gen_patterns(spec.d(), spec.m(), spec.pattern_mode, spec.seed)?;
    let beta = spec.effective_beta();
    let mut tasks = Vec::new();
    for &alpha in &spec.alphas {
        for (sigma_idx, &sigma) in spec.sigmas.iter().enumerate() {
            for trial in 0..spec.trials {
                tasks.push(NoiseTask {
                    alpha,
                    sigma_idx,
                    sigma,
                    trial,
                });
            }
        }
    }
    let rows = par_map(&tasks, |task| {
        let mu = trial_pattern(task.trial, spec.m());
        let target = patterns.pattern(mu)?;
        // Same noise draw for every α so the comparison is paired.
        let noise = gaussian_vector(&mut stream_rng(spec.seed, &[1, task.sigma_idx as u64, task.trial as u64]), spec.d());
        let x = &target + noise * task.sigma;
        let cfg = HopfieldConfig::new(task.alpha, beta)?;
        let p = hopfield::retrieval_weights(&x, &patterns, &cfg)?;
        let retrieved = patterns.matrix() * DVector::from_column_slice(&p);
        let error = (retrieved - &target).norm();
        let separation = hopfield::pattern_separation(&x, &patterns, mu)?;
        Ok(vec![
            Cell::Float(task.alpha.get()),
            Cell::Float(task.sigma),
            Cell::from(task.trial),
            Cell::from(mu),
            Cell::Float(error),
            Cell::from(p.support_size()),
            Cell::Float(separation),
        ])
    })?;
    let columns = columns(&["alpha", "sigma", "trial", "pattern", "error", "support", "separation"]);
    let summary = summarise(&columns, &rows, &["alpha", "sigma"], &["error", "support"]);

    let mut growth = Vec::new();
    let mut overall: Vec<(f64, f64)> = Vec::new();
    for &alpha in &spec.alphas {
        let a = Cell::Float(alpha.get());
        let means: Vec<(f64, f64)> = summary
            .iter()
            .filter(|s| s.metric == "error" && s.group["alpha"].same(&a))
            .map(|s| (s.group["sigma"].as_f64().unwrap_or(f64::NAN), s.mean))
            .collect();
        let usable: Vec<(f64, f64)> = means.iter().copied().filter(|&(s, e)| s > 0.0 && e > 0.0).collect();
        let exp_pts: Vec<(f64, f64)> = usable.iter().map(|&(s, e)| (s, e.ln())).collect();
        let poly_pts: Vec<(f64, f64)> = usable.iter().map(|&(s, e)| (s.ln(), e.ln())).collect();
        let (exp_slope, exp_r2) = linear_fit(&exp_pts);
        let (poly_slope, poly_r2) = linear_fit(&poly_pts);
        growth.push(GrowthFit {
            alpha: alpha.get(),
            exp_slope,
            exp_r2,
            poly_slope,
            poly_r2,
            points: usable.len(),
        });
        let total = means.iter().map(|m| m.1).sum::<f64>() / means.len() as f64;
        overall.push((alpha.get(), total));
    }
    overall.sort_by(|a, b| b.1.total_cmp(&a.1));

    Ok(Report {
        metadata: metadata(spec),
        columns,
        rows,
        summary,
        growth,
        error_order: overall.into_iter().map(|(a, _)| a).collect(),
    })
}

// ---------------------------------------------------------------------------
// convergence benchmark

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Picard,
    Km,
    AndersonFixed,
    AndersonLs1,
    AndersonLs,
    Gag,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Picard,
        Method::Km,
        Method::AndersonFixed,
        Method::AndersonLs1,
        Method::AndersonLs,
        Method::Gag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Picard => "picard",
            Method::Km => "km",
            Method::AndersonFixed => "anderson_fixed",
            Method::AndersonLs1 => "anderson_ls1",
            Method::AndersonLs => "anderson_ls",
            Method::Gag => "gag",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Testbed {
    Contraction,
    Hopfield,
}

impl Testbed {
    pub fn name(self) -> &'static str {
        match self {
            Testbed::Contraction => "contraction",
            Testbed::Hopfield => "hopfield",
        }
    }
}

/// Symmetric `A = Q diag(λ) Qᵀ` with a random orthogonal `Q`, eigenvalues
/// evenly spaced on `[0, ρ]`, and a Gaussian offset `b`, so
/// `F(x) = Ax + b` contracts at rate exactly `ρ`.
pub fn linear_contraction(d: usize, seed: u64, trial: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = stream_rng(seed, &[2, trial as u64]);
    let q = gaussian_matrix(&mut rng, d, d).qr().q();
    let eig = DVector::from_fn(d, |i, _| {
        if d == 1 {
            CONTRACTION_RADIUS
        } else {
            CONTRACTION_RADIUS * (d - 1 - i) as f64 / (d - 1) as f64
        }
    });
    let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    let b = gaussian_vector(&mut rng, d);
    (a, b)
}

fn largest_sigma(spec: &ExperimentSpec) -> f64 {
    spec.sigmas.iter().copied().fold(0.0, f64::max)
}

fn hopfield_start(spec: &ExperimentSpec, patterns: &PatternMatrix, stream: u64, trial: usize) -> Result<(usize, DVector<f64>)> {
    let mu = trial_pattern(trial, spec.m());
    let noise = gaussian_vector(&mut stream_rng(spec.seed, &[stream, trial as u64]), spec.d());
    Ok((mu, patterns.pattern(mu)? + noise * largest_sigma(spec)))
}

/// Runs a fixed-point method; divergence is reported, not raised.
fn settle(run: Result<IterationTrace>) -> Result<(IterationTrace, bool)> {
    match run {
        Ok(t) => Ok((t, false)),
        Err(Error::Divergence { trace }) => Ok((*trace, true)),
        Err(e) => Err(e),
    }
}

fn run_method<S: Operator, D: Operator>(
    method: Method,
    sparse: &S,
    dense: &D,
    x0: &DVector<f64>,
    spec: &ExperimentSpec,
) -> Result<IterationTrace> {
    let (tol, n) = (spec.tol, spec.max_iter);
    match method {
        Method::Picard => picard_iterate(sparse, x0, tol, n),
        Method::Km => km_iterate(sparse, x0, spec.km_relax, tol, n),
        Method::AndersonFixed => anderson_iterate(sparse, x0, 1, AndersonWeights::Fixed(spec.anderson_omega), tol, n),
        Method::AndersonLs1 => anderson_iterate(sparse, x0, 1, AndersonWeights::LeastSquares, tol, n),
        Method::AndersonLs => anderson_iterate(sparse, x0, spec.anderson_memory, AndersonWeights::LeastSquares, tol, n),
        Method::Gag => gag_iterate(sparse, dense, x0, &spec.guidance, None, tol, n),
    }
}

pub fn run_convergence_bench(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    let d = spec.d();
    let patterns = gen_patterns(d, spec.m(), spec.pattern_mode, spec.seed)?;
    let sparse_cfg = HopfieldConfig::new(spec.guidance.alpha, spec.effective_beta())?;
    let dense_cfg = HopfieldConfig::new(Alpha::SOFTMAX, spec.effective_beta())?;

    let mut tasks = Vec::new();
    for testbed in [Testbed::Contraction, Testbed::Hopfield] {
        for method in Method::ALL {
            for trial in 0..spec.trials {
                tasks.push((testbed, method, trial));
            }
        }
    }
    let rows = par_map(&tasks, |&(testbed, method, trial)| {
        let run = match testbed {
            Testbed::Contraction => {
                let (a, b) = linear_contraction(d, spec.seed, trial);
                let f = FnOperator::new("linear", d, |x: &DVector<f64>| Ok(&a * x + &b));
                let lagged = FnOperator::new("linear-lagged", d, |x: &DVector<f64>| {
                    Ok(x + (&a * x + &b - x) * CONTRACTION_DENSE_RELAX)
                });
                run_method(method, &f, &lagged, &DVector::zeros(d), spec)
            }
            Testbed::Hopfield => {
                let (_, x0) = hopfield_start(spec, &patterns, 5, trial)?;
                let sparse = FnOperator::new("hopfield-sparse", d, |x: &DVector<f64>| hopfield::retrieve(x, &patterns, &sparse_cfg));
                let dense = FnOperator::new("hopfield-dense", d, |x: &DVector<f64>| hopfield::retrieve(x, &patterns, &dense_cfg));
                run_method(method, &sparse, &dense, &x0, spec)
            }
        };
        let (trace, diverged) = settle(run)?;
        Ok(vec![
            Cell::from(testbed.name()),
            Cell::from(method.name()),
            Cell::from(trial),
            Cell::from(trace.iterations_used),
            Cell::from(trace.converged),
            Cell::from(diverged),
            Cell::Float(trace.final_residual().unwrap_or(f64::NAN)),
            Cell::from(trace.picard_fallbacks.len()),
        ])
    })?;
    let columns = columns(&[
        "testbed",
        "method",
        "trial",
        "iterations",
        "converged",
        "diverged",
        "final_residual",
        "fallbacks",
    ]);
    let summary = summarise(&columns, &rows, &["testbed", "method"], &["iterations", "converged", "final_residual"]);
    Ok(Report {
        metadata: metadata(spec),
        columns,
        rows,
        summary,
        growth: Vec::new(),
        error_order: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// guidance sweep

/// Forcing parameters of the synthetic testbed used by the sweep.
pub const SWEEP_CONTRACTION: f64 = 0.9;
pub const SWEEP_FORCING_SLOPE: f64 = 0.05;
pub const SWEEP_DENSE_GAIN: f64 = 1.05;
pub const SWEEP_KICK: f64 = 0.5;

/// Whether `u` never increases by more than [`MONOTONE_SLACK`].
pub fn is_monotone(u: &[f64]) -> bool {
    u.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK)
}

pub fn synthetic_testbed(d: usize, seed: u64, trial: usize) -> Result<(SyntheticWeakContraction, DVector<f64>)> {
    let mut rng = stream_rng(seed, &[3, trial as u64]);
    let direction = unit_vector(&mut rng, d);
    let sys = SyntheticWeakContraction::new(SWEEP_CONTRACTION, SWEEP_FORCING_SLOPE, &direction)?
        .with_dense_gain(SWEEP_DENSE_GAIN)?
        .with_kick(SWEEP_KICK)?;
    let x0 = &sys.fixed_point + unit_vector(&mut rng, d);
    Ok((sys, x0))
}

pub fn run_guidance_sweep(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    let d = spec.d();
    let patterns = gen_patterns(d, spec.m(), spec.pattern_mode, spec.seed)?;
    let sparse_cfg = HopfieldConfig::new(spec.guidance.alpha, spec.effective_beta())?;
    let dense_cfg = HopfieldConfig::new(Alpha::SOFTMAX, spec.effective_beta())?;

    let mut tasks = Vec::new();
    for testbed in ["synthetic", "hopfield"] {
        for &lambda in &spec.lambdas {
            for zeta in [0.0, 1.0] {
                for trial in 0..spec.trials {
                    tasks.push((testbed, lambda, zeta, trial));
                }
            }
        }
    }
    let rows = par_map(&tasks, |&(testbed, lambda, zeta, trial)| {
        let params = GuidanceParams::new(lambda, zeta, spec.guidance.eta, spec.guidance.alpha)?;
        let (run, x_star) = if testbed == "synthetic" {
            let (sys, x0) = synthetic_testbed(d, spec.seed, trial)?;
            let run = gag_iterate(
                &sys.sparse_operator(),
                &sys.dense_operator(),
                &x0,
                &params,
                Some(&sys.fixed_point),
                spec.tol,
                spec.max_iter,
            );
            (run, sys.fixed_point.clone())
        } else {
            let (mu, x0) = hopfield_start(spec, &patterns, 4, trial)?;
            let sparse = FnOperator::new("hopfield-sparse", d, |x: &DVector<f64>| hopfield::retrieve(x, &patterns, &sparse_cfg));
            let dense = FnOperator::new("hopfield-dense", d, |x: &DVector<f64>| hopfield::retrieve(x, &patterns, &dense_cfg));
            // Reference point: the sparse fixed point reached from the clean pattern.
            let reference = picard_iterate(&sparse, &patterns.pattern(mu)?, spec.tol, spec.max_iter)?;
            let x_star = reference.final_state().clone();
            let run = gag_iterate(&sparse, &dense, &x0, &params, Some(&x_star), spec.tol, spec.max_iter);
            (run, x_star)
        };
        let (trace, diverged) = settle(run)?;
        let u = trace.ortho_errors.clone().unwrap_or_default();
        let g = trace.guidance_norms.clone().unwrap_or_default();
        let final_error = (trace.final_state() - &x_star).norm();
        Ok(vec![
            Cell::from(testbed),
            Cell::Float(lambda),
            Cell::Float(zeta),
            Cell::from(trial),
            Cell::from(trace.iterations_used),
            Cell::from(trace.converged),
            Cell::from(diverged),
            Cell::Float(final_error),
            Cell::Float(u.first().copied().unwrap_or(f64::NAN)),
            Cell::Float(u.last().copied().unwrap_or(f64::NAN)),
            Cell::from(is_monotone(&u)),
            Cell::Float(g.iter().copied().fold(0.0, f64::max)),
        ])
    })?;
    let columns = columns(&[
        "testbed",
        "lambda",
        "zeta",
        "trial",
        "iterations",
        "converged",
        "diverged",
        "final_error",
        "u_initial",
        "u_final",
        "u_monotone",
        "max_guidance_norm",
    ]);
    let summary = summarise(
        &columns,
        &rows,
        &["testbed", "lambda", "zeta"],
        &["final_error", "u_monotone", "max_guidance_norm", "converged"],
    );
    Ok(Report {
        metadata: metadata(spec),
        columns,
        rows,
        summary,
        growth: Vec::new(),
        error_order: Vec::new(),
    })
}
