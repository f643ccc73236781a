use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sketchcv::bench::boxplot_stats;
use sketchcv::efamily::{random_spd, CovarianceModel};
use sketchcv::inner_product::{cv_em, cv_init, mle_cubic, SolverConfig};
use sketchcv::sketch::{generate_vector_pair, hash_pair, suff_stats, HashFamily, Scheme, SeededRng, SketchPair};

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

fn model(seed: u64, p: usize, t: usize) -> (CovarianceModel, Vec<f64>) {
    let mut s = SeededRng::new(seed, 17).sampler();
    let v = random_spd(p, 0.05, &mut s);
    let alpha = s.normal_vec(t);
    (CovarianceModel::new(v, t, 1 + (seed % 7) as usize).unwrap(), alpha)
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (2usize..=8).prop_flat_map(|p| (Just(p), 1..p))
}

fn sketch_stats(seed: u64, k: usize, r: f64, theta: f64) -> (SketchPair, f64, f64) {
    let (x1, x2) = generate_vector_pair(200, r, theta, &SeededRng::new(seed, 1)).unwrap();
    let mut s = SeededRng::new(seed, 2).sampler();
    let (v1, v2) = hash_pair(&x1, &x2, k, HashFamily::Random, &mut s);
    let n1: f64 = x1.iter().map(|x| x * x).sum();
    let n2: f64 = x2.iter().map(|x| x * x).sum();
    (SketchPair::new(v1, v2, n1, n2, Scheme::FeatureHash).unwrap(), n1, n2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn schur_complement_matches_inverse_block((p, t) in dims(), seed in any::<u64>()) {
        let (m, _) = model(seed, p, t);
        let schur = m.schur_complement().unwrap();
        // explicit inverses are fine in an oracle
        let inv = m.v().clone().try_inverse().unwrap();
        let block = inv.view((0, 0), (t, t)).into_owned().try_inverse().unwrap();
        for (a, b) in schur.iter().zip(block.iter()) {
            prop_assert!((a - b).abs() <= 1e-9 * schur.amax(), "{a} vs {b}");
        }
    }

    #[test]
    fn mle_and_cve_variances_agree((p, t) in dims(), seed in any::<u64>()) {
        let (m, alpha) = model(seed, p, t);
        let cve = m.cve_variance(&alpha).unwrap();
        let mle = m.mle_variance(&alpha).unwrap();
        prop_assert!(rel_close(cve, mle, 1e-9), "{cve} vs {mle}");
    }

    #[test]
    fn control_variates_never_increase_variance((p, t) in dims(), seed in any::<u64>()) {
        let (m, alpha) = model(seed, p, t);
        let cve = m.cve_variance(&alpha).unwrap();
        let plain = m.plain_variance(&alpha).unwrap();
        prop_assert!(cve <= plain * (1.0 + 1e-12));
        let w = m.cv_weights(&alpha).unwrap();
        if w.d.norm() > 1e-6 {
            prop_assert!(cve < plain);
        }
    }

    #[test]
    fn cv_weights_solve_their_system((p, t) in dims(), seed in any::<u64>()) {
        let (m, alpha) = model(seed, p, t);
        let w = m.cv_weights(&alpha).unwrap();
        let part = m.partition();
        let bt_alpha = part.b.transpose() * DVector::from_column_slice(&alpha);
        let residual = (&part.d * &w.c + &bt_alpha).norm();
        prop_assert!(residual <= 1e-10 * (bt_alpha.norm() + 1.0), "{residual}");
    }

    #[test]
    fn block_diagonal_change_of_basis_keeps_variances((p, t) in dims(), seed in any::<u64>()) {
        let (m, alpha) = model(seed, p, t);
        let mut s = SeededRng::new(seed, 99).sampler();
        let mut a = DMatrix::zeros(p, p);
        for (lo, len) in [(0, t), (t, p - t)] {
            for i in 0..len {
                for j in 0..len {
                    a[(lo + i, lo + j)] = 0.3 * s.normal() + if i == j { 2.0 } else { 0.0 };
                }
            }
        }
        let moved = m.reparametrize(&a).unwrap();
        let at = a.view((0, 0), (t, t)).transpose();
        let alpha_new: Vec<f64> = (at * DVector::from_column_slice(&alpha)).iter().copied().collect();
        let before = m.cve_variance(&alpha).unwrap();
        prop_assert!(rel_close(moved.cve_variance(&alpha_new).unwrap(), before, 1e-9));
        prop_assert!(rel_close(moved.mle_variance(&alpha_new).unwrap(), before, 1e-9));
    }

    #[test]
    fn inverse_undoes_linear_map(p in 2usize..=8, seed in any::<u64>()) {
        let mut s = SeededRng::new(seed, 5).sampler();
        let j = DMatrix::from_fn(p, p, |r, c| s.normal() + if r == c { 3.0 } else { 0.0 });
        let inv = j.clone().try_inverse().unwrap();
        let x = DVector::from_vec(s.normal_vec(p));
        // applying the map then its inverse returns the input
        prop_assert!((&inv * (&j * &x) - &x).norm() <= 1e-10 * (x.norm() + 1.0));
        let id = &inv * &j;
        prop_assert!((id - DMatrix::identity(p, p)).amax() <= 1e-10);
    }

    #[test]
    fn sketch_stats_obey_cauchy_schwarz(
        seed in any::<u64>(), k in 1usize..60, r in 0.1f64..10.0, theta in 0.0f64..PI,
    ) {
        let (pair, _, _) = sketch_stats(seed, k, r, theta);
        prop_assert!(suff_stats(&pair).satisfies_cauchy_schwarz());
    }

    #[test]
    fn cv_init_is_first_cv_em_iterate(
        seed in any::<u64>(), k in 5usize..100, r in 0.1f64..10.0, theta in 0.05f64..3.1,
    ) {
        let (pair, n1, n2) = sketch_stats(seed, k, r, theta);
        let stats = suff_stats(&pair);
        let init = cv_init(&stats, n1, n2).estimate;
        let em = match cv_em(&stats, n1, n2, &SolverConfig::for_norms(n1, n2)) {
            Ok(r) => r,
            Err(e) => e.partial().unwrap().clone(),
        };
        prop_assert_eq!(init.to_bits(), em.trace[1].to_bits());
    }

    #[test]
    fn cv_em_iterates_stay_bounded(
        seed in any::<u64>(), k in 5usize..100, r in 0.1f64..10.0, theta in 0.05f64..3.1,
    ) {
        let (pair, n1, n2) = sketch_stats(seed, k, r, theta);
        let st = suff_stats(&pair);
        let em = match cv_em(&st, n1, n2, &SolverConfig::for_norms(n1, n2)) {
            Ok(r) => r,
            Err(e) => e.partial().unwrap().clone(),
        };
        let bound = st.w3.abs()
            + (n1 * n2).sqrt() / 2.0 * ((st.w1 - n1).abs() / n1 + (st.w2 - n2).abs() / n2);
        for f in &em.trace[1..] {
            prop_assert!(f.abs() <= bound * (1.0 + 1e-12), "{f} > {bound}");
        }
    }

    #[test]
    fn cv_em_fixed_point_is_mle_root(
        seed in any::<u64>(), k in 10usize..100, r in 0.1f64..10.0, theta in 0.05f64..3.1,
    ) {
        let (pair, n1, n2) = sketch_stats(seed, k, r, theta);
        let stats = suff_stats(&pair);
        let cfg = SolverConfig::for_norms(n1, n2);
        let cubic = mle_cubic(&stats, n1, n2);
        prop_assume!(cubic.classify_roots().count == 1);
        let em = cv_em(&stats, n1, n2, &cfg);
        prop_assume!(em.is_ok());
        let f = em.unwrap().estimate;
        prop_assert!(cubic.eval(f).abs() <= 10.0 * cfg.eps * (f * f + n1 * n2));
        let roots = cubic.companion_roots();
        let nearest = roots.iter().map(|x| (x - f).abs()).fold(f64::INFINITY, f64::min);
        prop_assert!(nearest <= 100.0 * cfg.eps, "{nearest} vs {}", cfg.eps);
    }

    #[test]
    fn boxplot_ordering(xs in prop::collection::vec(-1e6f64..1e6, 4..200)) {
        let b = boxplot_stats(&xs).unwrap();
        prop_assert!(b.whisker_lo <= b.q1 && b.q1 <= b.median);
        prop_assert!(b.median <= b.q3 && b.q3 <= b.whisker_hi);
        prop_assert!((0.0..1.0).contains(&b.outlier_fraction));
    }
}
