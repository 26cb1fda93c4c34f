use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Deserialize;

use hopgag::attention::{self, AttentionBatch};
use hopgag::entmax::{self, Alpha, Logits};
use hopgag::fixed_point::{self, AndersonWeights, FnOperator, IterationTrace};
use hopgag::guidance::{self, extended_f64};
use hopgag::harness::matrix_io::{read_json, read_matrix, read_vector, MatrixJson};
use hopgag::harness::report::write_trace_csv;
use hopgag::harness::{self, ExperimentSpec, ReportFormat};
use hopgag::hopfield::{self, default_beta, HopfieldConfig, PatternMatrix};
use hopgag::{Error, GuidanceParams, Result};

#[derive(Parser)]
#[command(name = "hopgag", version, about = "Sparse Hopfield retrieval, fixed-point solvers and attention guidance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// α-entmax of a logit vector.
    Entmax {
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Vector in the JSON matrix format.
        #[arg(long)]
        logits: PathBuf,
    },
    /// One retrieval step `Ξ α-entmax(βΞᵀx)`.
    Retrieve {
        /// d × M matrix, one pattern per column.
        #[arg(long)]
        patterns: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        alpha: f64,
        /// Defaults to 1/√d.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Attention over a `{"q", "k", "v"}` batch; guided when `--lambda` is set.
    Attend {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        zeta: f64,
        /// Norm cap; accepts `inf`.
        #[arg(long, default_value = "15", value_parser = parse_extended)]
        eta: f64,
    },
    /// Iterates Hopfield retrieval from a query and prints the trace as CSV.
    Iterate {
        #[arg(long, value_enum)]
        method: IterMethod,
        #[arg(long)]
        spec: PathBuf,
    },
    /// Runs a seeded experiment and writes its report.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum IterMethod {
    Picard,
    Km,
    Aa,
    Gag,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_extended(s: &str) -> std::result::Result<f64, String> {
    extended_f64::parse(s).ok_or_else(|| format!("not a number: {s:?}"))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchFile {
    q: MatrixJson,
    k: MatrixJson,
    v: MatrixJson,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    1000
}

fn default_relax() -> f64 {
    0.5
}

fn default_memory() -> usize {
    1
}

/// Input of the `iterate` subcommand.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IterateSpec {
    patterns: MatrixJson,
    query: MatrixJson,
    alpha: Alpha,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_max_iter")]
    max_iter: usize,
    #[serde(default = "default_relax")]
    relax: f64,
    #[serde(default = "default_memory")]
    memory: usize,
    /// Fixed Anderson weight; least squares when absent.
    #[serde(default)]
    omega: Option<f64>,
    #[serde(default)]
    guidance: Option<GuidanceParams>,
    #[serde(default)]
    x_star: Option<MatrixJson>,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out).map_err(|e| Error::Io {
        path: "<stdout>".into(),
        source: e,
    })
}

fn load_patterns(path: &Path) -> Result<PatternMatrix> {
    PatternMatrix::new(read_matrix(path)?)
}

fn iterate(method: IterMethod, spec_path: &Path) -> Result<IterationTrace> {
    let spec: IterateSpec = read_json(spec_path)?;
    let patterns = PatternMatrix::new(spec.patterns.to_matrix()?)?;
    let x0 = spec.query.to_vector()?;
    let d = patterns.dim();
    let beta = spec.beta.unwrap_or_else(|| default_beta(d));
    let cfg = HopfieldConfig::new(spec.alpha, beta)?;
    let sparse = FnOperator::new("retrieve", d, |x: &DVector<f64>| hopfield::retrieve(x, &patterns, &cfg));
    let (tol, n) = (spec.tol, spec.max_iter);
    let trace = match method {
        IterMethod::Picard => fixed_point::picard_iterate(&sparse, &x0, tol, n)?,
        IterMethod::Km => fixed_point::km_iterate(&sparse, &x0, spec.relax, tol, n)?,
        IterMethod::Aa => {
            let weights = spec.omega.map_or(AndersonWeights::LeastSquares, AndersonWeights::Fixed);
            fixed_point::anderson_iterate(&sparse, &x0, spec.memory, weights, tol, n)?
        }
        IterMethod::Gag => {
            let params = spec.guidance.unwrap_or(GuidanceParams {
                alpha: spec.alpha,
                ..GuidanceParams::default()
            });
            let dense_cfg = HopfieldConfig::new(Alpha::SOFTMAX, beta)?;
            let dense = FnOperator::new("retrieve-dense", d, |x: &DVector<f64>| hopfield::retrieve(x, &patterns, &dense_cfg));
            let x_star = spec.x_star.as_ref().map(MatrixJson::to_vector).transpose()?;
            guidance::gag_iterate(&sparse, &dense, &x0, &params, x_star.as_ref(), tol, n)?
        }
    };
    trace.with_energies(|x| hopfield::energy(x, &patterns, &cfg))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Entmax { alpha, beta, logits } => {
            let z = Logits::new(read_vector(&logits)?.data.into())?;
            let p = entmax::alpha_entmax(&z, Alpha::new(alpha)?, beta, entmax::DEFAULT_TOL)?;
            print_json(&MatrixJson::from_vector(&DVector::from_column_slice(&p)))
        }
        Command::Retrieve {
            patterns,
            query,
            alpha,
            beta,
        } => {
            let xi = load_patterns(&patterns)?;
            let x = read_vector(&query)?;
            let cfg = HopfieldConfig::new(Alpha::new(alpha)?, beta.unwrap_or_else(|| default_beta(xi.dim())))?;
            print_json(&MatrixJson::from_vector(&hopfield::retrieve(&x, &xi, &cfg)?))
        }
        Command::Attend {
            batch,
            alpha,
            lambda,
            zeta,
            eta,
        } => {
            let file: BatchFile = read_json(&batch)?;
            let b = AttentionBatch::new(file.q.to_matrix()?, file.k.to_matrix()?, file.v.to_matrix()?)?;
            let alpha = Alpha::new(alpha)?;
            let out = match lambda {
                Some(l) => attention::gag_attention(&b, &GuidanceParams::new(l, zeta, eta, alpha)?)?,
                None => attention::attention(&b, alpha)?,
            };
            print_json(&MatrixJson::from_matrix(&out.rows))
        }
        Command::Iterate { method, spec } => {
            let trace = iterate(method, &spec)?;
            write_trace_csv(&trace, std::io::stdout().lock())?;
            if !trace.converged {
                eprintln!("warning: stopped after {} iterations without reaching tol", trace.iterations_used);
            }
            Ok(())
        }
        Command::Experiment { spec, out, format } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| Error::Io { path: spec.clone(), source: e })?;
            let spec = ExperimentSpec::from_json(&text)?;
            let report = harness::run(&spec)?;
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
            };
            harness::write_report(&report, &out, format)?;
            eprintln!("{} rows written to {}", report.rows.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
