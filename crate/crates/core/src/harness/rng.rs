//! Seeded randomness. Every random draw in an experiment is a pure function
//! of the experiment seed and the grid coordinates of the trial that uses it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::spec::PatternMode;
use crate::error::Result;
use crate::hopfield::PatternMatrix;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream keyed by `seed` and a coordinate path.
pub fn stream_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let stream = path.iter().fold(0x5eed_u64, |acc, &p| splitmix(acc ^ splitmix(p)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian_vector<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Uniform direction on the unit sphere.
pub fn unit_vector<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vector(rng, d);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// `d × M` pattern matrix drawn from `N(0, I)`, or uniformly from the unit
/// sphere.
pub fn gen_patterns(d: usize, m: usize, mode: PatternMode, seed: u64) -> Result<PatternMatrix> {
    let mut rng = stream_rng(seed, &[0]);
    let columns: Vec<DVector<f64>> = (0..m)
        .map(|_| match mode {
            PatternMode::Gaussian => gaussian_vector(&mut rng, d),
            PatternMode::UnitSphere => unit_vector(&mut rng, d),
        })
        .collect();
    PatternMatrix::from_columns(&columns)
}
