//! Browser bindings for three small interactive views: entmax weights,
//! orthogonal-error trajectories under guidance, and retrieval error
//! against query noise.
//!
//! The plain functions in [`ops`] do the work and are testable natively;
//! the `#[wasm_bindgen]` exports only convert errors.

use wasm_bindgen::prelude::*;

pub mod ops {
    use hopgag::entmax::{self, Alpha, Logits, DEFAULT_TOL};
    use hopgag::guidance::{gag_iterate, GuidanceParams, SyntheticWeakContraction};
    use hopgag::harness::rng::{gaussian_vector, gen_patterns, stream_rng};
    use hopgag::harness::PatternMode;
    use hopgag::hopfield::{self, HopfieldConfig};
    use hopgag::Error;
    use nalgebra::DVector;

    pub type Result<T> = std::result::Result<T, String>;

    fn msg(e: Error) -> String {
        e.to_string()
    }

    pub fn entmax_weights(logits: &[f64], alpha: f64, beta: f64) -> Result<Vec<f64>> {
        let z = Logits::new(logits.to_vec()).map_err(msg)?;
        let a = Alpha::new(alpha).map_err(msg)?;
        Ok(entmax::alpha_entmax(&z, a, beta, DEFAULT_TOL).map_err(msg)?.into_inner())
    }

    /// `u_t` along a GAG run on the synthetic testbed in R³. The run stops
    /// early on divergence; the prefix is returned.
    pub fn orthogonal_errors(lambda: f64, zeta: f64, eta: f64, kick: f64, steps: usize) -> Result<Vec<f64>> {
        let tb = SyntheticWeakContraction::new(0.9, 0.05, &DVector::from_vec(vec![1.0, 0.0, 0.0]))
            .and_then(|t| t.with_kick(kick))
            .map_err(msg)?;
        let params = GuidanceParams::new(lambda, zeta, eta, Alpha::ENTMAX15).map_err(msg)?;
        let x0 = DVector::from_vec(vec![1.0, 0.5, -0.8]);
        let run = gag_iterate(
            &tb.sparse_operator(),
            &tb.dense_operator(),
            &x0,
            &params,
            Some(&tb.fixed_point),
            // Stop well before ‖x‖ nears the direction cutoff.
            1e-10,
            steps.max(1),
        );
        let trace = match run {
            Ok(t) => t,
            Err(Error::Divergence { trace }) => *trace,
            Err(e) => return Err(msg(e)),
        };
        Ok(trace.ortho_errors.unwrap_or_default())
    }

    /// Mean `‖T(ξ_μ + σε) − ξ_μ‖` over `trials` noisy queries for each σ,
    /// with 8 Gaussian patterns in R³² and β = 1/√32.
    pub fn noise_curve(alpha: f64, sigmas: &[f64], trials: usize, seed: u64) -> Result<Vec<f64>> {
        let (d, m) = (32, 8);
        let patterns = gen_patterns(d, m, PatternMode::Gaussian, seed).map_err(msg)?;
        let cfg = HopfieldConfig::with_default_beta(Alpha::new(alpha).map_err(msg)?, d);
        let trials = trials.max(1);
        let mut out = Vec::with_capacity(sigmas.len());
        for (i, &sigma) in sigmas.iter().enumerate() {
            let mut total = 0.0;
            for t in 0..trials {
                let target = patterns.pattern(t % m).map_err(msg)?;
                let mut rng = stream_rng(seed, &[1, i as u64, t as u64]);
                let x = &target + gaussian_vector(&mut rng, d) * sigma;
                total += (hopfield::retrieve(&x, &patterns, &cfg).map_err(msg)? - target).norm();
            }
            out.push(total / trials as f64);
        }
        Ok(out)
    }
}

fn js(r: ops::Result<Vec<f64>>) -> Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = entmaxWeights)]
pub fn entmax_weights(logits: &[f64], alpha: f64, beta: f64) -> Result<Vec<f64>, JsError> {
    js(ops::entmax_weights(logits, alpha, beta))
}

#[wasm_bindgen(js_name = orthogonalErrors)]
pub fn orthogonal_errors(lambda: f64, zeta: f64, eta: f64, kick: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    js(ops::orthogonal_errors(lambda, zeta, eta, kick, steps))
}

#[wasm_bindgen(js_name = noiseCurve)]
pub fn noise_curve(alpha: f64, sigmas: &[f64], trials: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    js(ops::noise_curve(alpha, sigmas, trials, seed))
}
