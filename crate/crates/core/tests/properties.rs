use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use hopgag::attention::{self, AttentionBatch};
use hopgag::entmax::{self, Alpha, Logits, ProbVector, DEFAULT_TOL};
use hopgag::fixed_point::{anderson_iterate, km_iterate, picard_iterate, AndersonWeights, FnOperator};
use hopgag::guidance::{decompose_residual, gag_step_detailed, GuidanceParams};
use hopgag::harness::matrix_io::MatrixJson;
use hopgag::hopfield::{self, HopfieldConfig, PatternMatrix};

fn logits(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, n)
}

fn alpha() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(1.5), Just(2.0), 1.0..=2.0f64]
}

fn beta() -> impl Strategy<Value = f64> {
    (-2.0..2.0f64).prop_map(|e: f64| 10f64.powf(e / 2.0))
}

fn eta() -> impl Strategy<Value = f64> {
    prop_oneof![Just(f64::INFINITY), 0.1..30.0f64]
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |d| DMatrix::from_row_slice(rows, cols, &d))
}

/// Patterns (d × M) and a query of dimension d.
fn hopfield_instance() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>)> {
    (1usize..8, 1usize..10).prop_flat_map(|(d, m)| {
        (matrix(d, m), prop::collection::vec(-2.0..2.0f64, d).prop_map(DVector::from_vec))
    })
}

fn batch() -> impl Strategy<Value = AttentionBatch> {
    (1usize..4, 1usize..6, 1usize..5, 1usize..4).prop_flat_map(|(n, m, d, dv)| {
        (matrix(n, d), matrix(m, d), matrix(m, dv)).prop_map(|(q, k, v)| AttentionBatch::new(q, k, v).unwrap())
    })
}

fn run_entmax(z: &[f64], a: f64, b: f64) -> ProbVector {
    entmax::alpha_entmax(&Logits::new(z.to_vec()).unwrap(), Alpha::new(a).unwrap(), b, DEFAULT_TOL).unwrap()
}

proptest! {
    #[test]
    fn entmax_lands_on_the_simplex(z in logits(1..=12), a in alpha(), b in beta()) {
        let p = run_entmax(&z, a, b);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn entmax_ignores_shifts(z in logits(1..=8), a in alpha(), b in beta(), c in -50.0..50.0f64) {
        let p = run_entmax(&z, a, b);
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let q = run_entmax(&shifted, a, b);
        for (x, y) in p.iter().zip(q.iter()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn entmax_commutes_with_permutations(z in logits(1..=8), a in alpha(), b in beta(), seed in any::<u64>()) {
        let n = z.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p = run_entmax(&z, a, b);
        let permuted: Vec<f64> = perm.iter().map(|&i| z[i]).collect();
        let q = run_entmax(&permuted, a, b);
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((q[j] - p[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn closed_forms_match_bisection(z in logits(1..=10), b in beta()) {
        let zl = Logits::new(z).unwrap();
        for a in [Alpha::ENTMAX15, Alpha::SPARSEMAX] {
            let exact = entmax::alpha_entmax(&zl, a, b, DEFAULT_TOL).unwrap();
            let bisect = entmax::entmax_bisect(&zl, a, b, DEFAULT_TOL).unwrap();
            for (x, y) in exact.iter().zip(bisect.iter()) {
                prop_assert!((x - y).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn near_one_alpha_approaches_softmax(z in prop::collection::vec(-5.0..=5.0f64, 1..=8), b in 0.1..1.0f64) {
        let zl = Logits::new(z).unwrap();
        let p = entmax::alpha_entmax(&zl, Alpha::new(1.0 + 1e-4).unwrap(), b, DEFAULT_TOL).unwrap();
        let s = entmax::softmax(&zl, b).unwrap();
        for (x, y) in p.iter().zip(s.iter()) {
            prop_assert!((x - y).abs() < 1e-2);
        }
    }

    #[test]
    fn support_shrinks_as_alpha_grows(z in logits(1..=10), b in beta()) {
        let zl = Logits::new(z).unwrap();
        let mut last = usize::MAX;
        for a in [1.1, 1.3, 1.5, 1.7, 2.0] {
            let k = entmax::threshold_and_support(&zl, Alpha::new(a).unwrap(), b).unwrap().kappa;
            prop_assert!(k <= last, "α={a}: κ={k} after {last}");
            last = k;
        }
    }

    #[test]
    fn threshold_reconstructs_the_weights(z in logits(1..=10), a in 1.05..=2.0f64, b in beta()) {
        let zl = Logits::new(z.clone()).unwrap();
        let al = Alpha::new(a).unwrap();
        let (p, r) = entmax::alpha_entmax_with_threshold(&zl, al, b, DEFAULT_TOL).unwrap();
        let rebuilt: Vec<f64> = z.iter().map(|zi| ((a - 1.0) * b * zi - r.tau).max(0.0).powf(1.0 / (a - 1.0))).collect();
        prop_assert!((rebuilt.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for (x, y) in p.iter().zip(&rebuilt) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        prop_assert_eq!(r.kappa, p.support_size());
    }

    #[test]
    fn fenchel_young(z in logits(2..=6), a in alpha(), b in beta(), raw in prop::collection::vec(0.0..1.0f64, 6)) {
        let n = z.len();
        let zl = Logits::new(z.clone()).unwrap();
        let al = Alpha::new(a).unwrap();
        let conj = entmax::tsallis_conjugate(&zl, al, b).unwrap();
        let total: f64 = raw[..n].iter().sum::<f64>() + 1e-9;
        let p = ProbVector::new(raw[..n].iter().map(|v| (v + 1e-9 / n as f64) / total).collect()).unwrap();
        let value = |p: &ProbVector| p.iter().zip(&z).map(|(pi, zi)| pi * zi).sum::<f64>() + entmax::tsallis_entropy(p, al) / b;
        prop_assert!(conj >= value(&p) - 1e-9);
        let star = entmax::alpha_entmax(&zl, al, b, DEFAULT_TOL).unwrap();
        prop_assert!((conj - value(&star)).abs() <= 1e-9 * (1.0 + conj.abs()));
    }

    #[test]
    fn retrieval_lowers_energy_and_stays_in_the_hull((xi, x) in hopfield_instance(), a in prop_oneof![Just(1.0), Just(1.5), Just(2.0)], b in beta()) {
        let patterns = PatternMatrix::new(xi).unwrap();
        let cfg = HopfieldConfig::new(Alpha::new(a).unwrap(), b).unwrap();
        let y = hopfield::retrieve(&x, &patterns, &cfg).unwrap();
        prop_assert!(y.norm() <= patterns.max_norm() * (1.0 + 1e-12));
        let before = hopfield::energy(&x, &patterns, &cfg).unwrap();
        let after = hopfield::energy(&y, &patterns, &cfg).unwrap();
        prop_assert!(after <= before + 1e-8, "{after} > {before}");
    }

    #[test]
    fn singleton_sparsemax_support_retrieves_exactly((xi, x) in hopfield_instance(), b in beta()) {
        let patterns = PatternMatrix::new(xi).unwrap();
        let cfg = HopfieldConfig::new(Alpha::SPARSEMAX, b).unwrap();
        let p = hopfield::retrieval_weights(&x, &patterns, &cfg).unwrap();
        if p.support_size() == 1 {
            let mu = p.support()[0];
            prop_assert_eq!(hopfield::retrieve(&x, &patterns, &cfg).unwrap(), patterns.pattern(mu).unwrap());
        }
    }

    #[test]
    fn decomposition_is_exact(r in prop::collection::vec(-10.0..10.0f64, 1..8), seed in prop::collection::vec(-10.0..10.0f64, 8)) {
        let r = DVector::from_vec(r);
        let dir = DVector::from_column_slice(&seed[..r.len()]);
        let (par, perp) = decompose_residual(&r, &dir).unwrap();
        prop_assert!((&par + &perp - &r).amax() <= 1e-12 * (1.0 + r.amax()));
        prop_assert!(par.dot(&perp).abs() <= 1e-10 * r.norm_squared().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn guidance_respects_its_ceiling(
        (xi, x) in hopfield_instance(),
        lambda in 0.0..12.0f64,
        zeta in 0.0..=1.0f64,
        eta in eta(),
    ) {
        let patterns = PatternMatrix::new(xi).unwrap();
        let d = patterns.dim();
        let sparse_cfg = HopfieldConfig::with_default_beta(Alpha::ENTMAX15, d);
        let dense_cfg = HopfieldConfig::with_default_beta(Alpha::SOFTMAX, d);
        let s = FnOperator::new("s", d, |x: &DVector<f64>| hopfield::retrieve(x, &patterns, &sparse_cfg));
        let t = FnOperator::new("d", d, |x: &DVector<f64>| hopfield::retrieve(x, &patterns, &dense_cfg));
        let params = GuidanceParams::new(lambda, zeta, eta, Alpha::ENTMAX15).unwrap();
        let step = gag_step_detailed(&s, &t, &x, &params).unwrap();
        prop_assert!((&step.next - &step.sparse).norm() <= lambda * eta * (1.0 + 1e-12));
    }

    #[test]
    fn gag_attention_reduces_exactly(b in batch(), a in alpha(), lambda in 0.0..12.0f64) {
        let al = Alpha::new(a).unwrap();
        let zero = GuidanceParams::new(0.0, 0.3, 15.0, al).unwrap();
        prop_assert_eq!(attention::gag_attention(&b, &zero).unwrap().rows, attention::attention(&b, al).unwrap().rows);
        let open = GuidanceParams::new(lambda, 1.0, f64::INFINITY, al).unwrap();
        prop_assert_eq!(
            attention::gag_attention(&b, &open).unwrap().rows,
            attention::pladis_extrapolate(&b, al, lambda).unwrap().rows
        );
    }

    #[test]
    fn attention_rows_stay_in_the_value_hull(b in batch(), a in alpha()) {
        let out = attention::attention(&b, Alpha::new(a).unwrap()).unwrap();
        let v = b.values();
        let cap = v.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        for i in 0..out.rows.nrows() {
            prop_assert!(out.row(i).norm() <= cap * (1.0 + 1e-12));
            for j in 0..v.ncols() {
                let col = v.column(j);
                prop_assert!(out.rows[(i, j)] >= col.min() - 1e-12 && out.rows[(i, j)] <= col.max() + 1e-12);
            }
        }
        for w in out.weights.unwrap() {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn guided_attention_row_respects_its_ceiling(b in batch(), lambda in 0.0..12.0f64, zeta in 0.0..=1.0f64, eta in eta()) {
        let params = GuidanceParams::new(lambda, zeta, eta, Alpha::SPARSEMAX).unwrap();
        let guided = attention::gag_attention(&b, &params).unwrap();
        let sparse = attention::attention(&b, Alpha::SPARSEMAX).unwrap();
        for i in 0..guided.rows.nrows() {
            prop_assert!((guided.row(i) - sparse.row(i)).norm() <= lambda * eta * (1.0 + 1e-12));
        }
    }

    #[test]
    fn relaxed_iterations_reach_the_fixed_point_of_a_contraction(
        a in matrix(3, 3),
        b in prop::collection::vec(-1.0..1.0f64, 3),
        relax in 0.2..=1.0f64,
    ) {
        // Rescale so the spectral norm is 0.8.
        let norm = a.clone().svd(false, false).singular_values.max();
        prop_assume!(norm > 1e-6);
        let a = a * (0.8 / norm);
        let b = DVector::from_vec(b);
        let exact = (DMatrix::identity(3, 3) - &a).lu().solve(&b).unwrap();
        let f = FnOperator::new("affine", 3, |x: &DVector<f64>| Ok(&a * x + &b));
        let x0 = DVector::zeros(3);
        for t in [
            picard_iterate(&f, &x0, 1e-11, 5000).unwrap(),
            km_iterate(&f, &x0, relax, 1e-11, 5000).unwrap(),
            anderson_iterate(&f, &x0, 3, AndersonWeights::LeastSquares, 1e-11, 5000).unwrap(),
        ] {
            prop_assert!(t.converged);
            prop_assert!((t.final_state() - &exact).amax() < 1e-9);
            prop_assert!(t.residual_norms.iter().all(|r| *r >= 0.0));
            prop_assert_eq!(t.states.len(), t.iterations_used + 1);
            for w in &t.anderson_weights {
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn matrix_json_round_trips(m in (1usize..5, 1usize..5).prop_flat_map(|(r, c)| matrix(r, c))) {
        let j = MatrixJson::from_matrix(&m);
        let back: MatrixJson = serde_json::from_str(&serde_json::to_string(&j).unwrap()).unwrap();
        prop_assert_eq!(back.to_matrix().unwrap(), m);
    }
}
