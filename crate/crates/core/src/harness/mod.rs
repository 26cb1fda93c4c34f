//! Seeded experiments, their specs and report writers.

pub mod experiments;
pub mod matrix_io;
pub mod report;
pub mod rng;
pub mod spec;

pub use experiments::{run, thread_count, THREADS_ENV};
pub use matrix_io::MatrixJson;
pub use report::{write_report, Cell, Report, ReportFormat};
pub use spec::{ExperimentKind, ExperimentSpec, PatternMode};
