//! Sparse Hopfield retrieval with α-entmax, fixed-point accelerators and
//! geometry-aware guidance.
//!
//! ```
//! use hopgag::entmax::{alpha_entmax, Alpha, Logits, DEFAULT_TOL};
//!
//! let z = Logits::new(vec![3.0, 1.0, 0.2]).unwrap();
//! let p = alpha_entmax(&z, Alpha::SPARSEMAX, 1.0, DEFAULT_TOL).unwrap();
//! assert_eq!(p.as_slice(), &[1.0, 0.0, 0.0]);
//! ```

pub mod attention;
pub mod entmax;
pub mod error;
pub mod fixed_point;
pub mod guidance;
pub mod harness;
pub mod hopfield;

pub use entmax::{Alpha, Logits, ProbVector};
pub use error::{Error, Result};
pub use fixed_point::{IterationTrace, Operator};
pub use guidance::GuidanceParams;
pub use hopfield::{HopfieldConfig, PatternMatrix};
