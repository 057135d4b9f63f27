mod common;

use common::*;
use proptest::prelude::*;
use streamot::config::TileConfig;
use streamot::hvp::cg_solve;
use streamot::io::{decode, encode, Dtype};
use streamot::linalg::Matrix;
use streamot::measure::{CostSpec, DiscreteMeasure};
use streamot::potentials::{shift_potentials, unshift_potentials, ShiftedPotentials};
use streamot::rng::Rng;
use streamot::solver::dual_cost;
use streamot::stream::{apply_plan, apply_plan_adjoint, induced_marginals, update_f_hat, IoLedger};

const SQ: CostSpec = CostSpec::SquaredEuclidean;

fn instance(seed: u64, n: usize, m: usize, d: usize, eps: f64) -> (DiscreteMeasure, DiscreteMeasure, ShiftedPotentials) {
    let (src, tgt) = pair(seed, n, m, d);
    let mut rng = Rng::new(seed ^ 0x5eed);
    let f = (0..n).map(|_| rng.normal()).collect();
    let g = (0..m).map(|_| rng.normal()).collect();
    (src, tgt, ShiftedPotentials::new(f, g, eps).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shift_round_trip(vals in prop::collection::vec(-1e3f64..1e3, 1..20), off in -50.0f64..50.0) {
        let alpha: Vec<f64> = vals.iter().map(|v| v * 0.5 + off).collect();
        let p = ShiftedPotentials::new(vals.clone(), vals.clone(), 0.1).unwrap();
        let (f, g) = unshift_potentials(&p, &alpha, &alpha).unwrap();
        let q = shift_potentials(&f, &g, &alpha, &alpha, 0.1).unwrap();
        for (a, b) in q.f_hat().iter().zip(&vals) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs() + off.abs()));
        }
    }

    #[test]
    fn binary_round_trip_is_exact(seed in any::<u64>(), n in 1usize..30, d in 1usize..6, labeled in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let x = rng.normal_matrix(n, d, 3.0);
        let m = if labeled {
            let labels = (0..n).map(|_| rng.below(4) as u32).collect();
            DiscreteMeasure::uniform_labeled(x, labels).unwrap()
        } else {
            DiscreteMeasure::uniform(x).unwrap()
        };
        let bytes = encode(&m, Dtype::F64);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(back.points(), m.points());
        prop_assert_eq!(back.labels(), m.labels());
        prop_assert_eq!(encode(&back, Dtype::F64), bytes);
    }

    #[test]
    fn f_update_is_tiling_invariant(seed in any::<u64>(), n in 1usize..25, m in 1usize..25, bn in 1usize..30, bm in 1usize..30, eps in 0.01f64..2.0) {
        let (src, tgt, p) = instance(seed, n, m, 2, eps);
        let one = TileConfig::new(n, m).unwrap();
        let t = TileConfig::new(bn, bm).unwrap();
        let a = update_f_hat(&src, &tgt, p.g_hat(), &SQ, eps, &one, &IoLedger::new()).unwrap();
        let b = update_f_hat(&src, &tgt, p.g_hat(), &SQ, eps, &t, &IoLedger::new()).unwrap();
        prop_assert!(rel_diff(&b, &a) <= 1e-12);
    }

    #[test]
    fn marginal_masses_agree(seed in any::<u64>(), n in 1usize..30, m in 1usize..30, eps in 0.05f64..2.0) {
        let (src, tgt, p) = instance(seed, n, m, 3, eps);
        let (r, c) = induced_marginals(&src, &tgt, &p, &SQ, &TileConfig::new(7, 5).unwrap(), &IoLedger::new()).unwrap();
        let (sr, sc): (f64, f64) = (r.iter().sum(), c.iter().sum());
        prop_assert!((sr - sc).abs() <= 1e-12 * sr.max(1e-300));
        prop_assert!(r.iter().chain(&c).all(|v| *v >= 0.0));
    }

    #[test]
    fn transport_is_adjoint_and_linear(seed in any::<u64>(), n in 1usize..20, m in 1usize..20, p_cols in 1usize..4) {
        let (src, tgt, p) = instance(seed, n, m, 2, 0.5);
        let mut rng = Rng::new(seed.wrapping_add(1));
        let v = rng.normal_matrix(m, p_cols, 1.0);
        let w = rng.normal_matrix(m, p_cols, 1.0);
        let u = rng.normal_matrix(n, p_cols, 1.0);
        let t = TileConfig::new(4, 3).unwrap();
        let l = IoLedger::new();
        let pv = apply_plan(&src, &tgt, &p, &v, &SQ, &t, &l).unwrap();
        let pw = apply_plan(&src, &tgt, &p, &w, &SQ, &t, &l).unwrap();
        let pvw = apply_plan(&src, &tgt, &p, &v.add_scaled(2.0, &w).unwrap(), &SQ, &t, &l).unwrap();
        let lin = pv.add_scaled(2.0, &pw).unwrap();
        prop_assert!(max_abs_diff(pvw.as_slice(), lin.as_slice()) <= 1e-10 * (1.0 + lin.max_abs()));
        let ptu = apply_plan_adjoint(&src, &tgt, &p, &u, &SQ, &t, &l).unwrap();
        let (a, b) = (pv.inner(&u).unwrap(), v.inner(&ptu).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn dual_cost_invariant_to_mass_shift(seed in any::<u64>(), n in 1usize..15, m in 1usize..15, k in -3.0f64..3.0) {
        let (src, tgt, p) = instance(seed, n, m, 2, 0.7);
        let t = TileConfig::default();
        let base = dual_cost(&src, &tgt, &p, &SQ, &t, &IoLedger::new()).unwrap();
        let q = ShiftedPotentials::new(
            p.f_hat().iter().map(|v| v + k).collect(),
            p.g_hat().iter().map(|v| v - k).collect(),
            0.7,
        ).unwrap();
        let moved = dual_cost(&src, &tgt, &q, &SQ, &t, &IoLedger::new()).unwrap();
        prop_assert!((moved - base).abs() <= 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn cg_solves_spd_systems(seed in any::<u64>(), q in 1usize..12) {
        let mut rng = Rng::new(seed);
        let b = rng.normal_matrix(q, q, 1.0);
        let mut a = naive_matmul(&b.transpose(), &b);
        for i in 0..q {
            a.set(i, i, a.get(i, i) + 1.0);
        }
        let rhs: Vec<f64> = (0..q).map(|_| rng.normal()).collect();
        let out = cg_solve(|v| Ok(naive_matmul(&a, &Matrix::from_vec(q, 1, v.to_vec())?).into_vec()), &rhs, 1e-12, 500).unwrap();
        let back = naive_matmul(&a, &Matrix::from_vec(q, 1, out.solution.clone()).unwrap());
        prop_assert!(max_abs_diff(back.as_slice(), &rhs) <= 1e-8);
    }
}
