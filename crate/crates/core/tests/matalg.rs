use proptest::prelude::*;
use sdwsn_core::matalg::{self, Mat};

fn matrix(max: usize) -> impl Strategy<Value = Mat> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |v| Mat::from_vec(r, c, v))
    })
}

/// `A·B` with inner dimension `k`, so rank ≤ k.
fn low_rank(max: usize) -> impl Strategy<Value = Mat> {
    (1..=max, 1..=max, 1..=3usize).prop_flat_map(|(r, c, k)| {
        (
            prop::collection::vec(-3.0f64..3.0, r * k),
            prop::collection::vec(-3.0f64..3.0, k * c),
        )
            .prop_map(move |(a, b)| Mat::from_vec(r, k, a) * Mat::from_vec(k, c, b))
    })
}

fn any_matrix(max: usize) -> impl Strategy<Value = Mat> {
    prop_oneof![matrix(max), low_rank(max)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn moore_penrose_axioms(c in any_matrix(12)) {
        let p = matalg::pinv(&c, 0.0).unwrap();
        let tol = 1e-8 * c.norm().max(1.0);
        prop_assert!((&c * &p * &c - &c).norm() <= tol);
        prop_assert!((&p * &c * &p - &p).norm() <= 1e-8 * p.norm().max(1.0));
        let cp = &c * &p;
        let pc = &p * &c;
        prop_assert!((cp.transpose() - &cp).norm() <= tol);
        prop_assert!((pc.transpose() - &pc).norm() <= tol);
    }

    #[test]
    fn svd_invariants(c in any_matrix(10)) {
        let f = matalg::svd(&c).unwrap();
        prop_assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(f.s.iter().all(|s| *s >= 0.0));
        prop_assert!((f.reconstruct() - &c).norm() <= 1e-10 * c.norm().max(1.0));
        let k = f.s.len();
        prop_assert!((f.u.transpose() * &f.u - Mat::identity(k, k)).amax() < 1e-10);
        prop_assert!((f.v.transpose() * &f.v - Mat::identity(k, k)).amax() < 1e-10);
    }

    #[test]
    fn eckart_young_tail(c in any_matrix(8), r in 0usize..8) {
        let f = matalg::svd(&c).unwrap();
        let tail: f64 = f.s.iter().skip(r).map(|s| s * s).sum();
        let err = matalg::frob2(&(&c - matalg::truncate(&c, r).unwrap()));
        prop_assert!((err - tail).abs() <= 1e-10 * matalg::frob2(&c).max(1e-300));
    }

    #[test]
    fn projection_algebra(c in any_matrix(8)) {
        let l = matalg::left_proj(&c).unwrap();
        let r = matalg::right_proj(&c).unwrap();
        let tol = 1e-10 * c.norm().max(1.0);
        prop_assert!((&l * &l - &l).amax() <= tol);
        prop_assert!((&r * &r - &r).amax() <= tol);
        prop_assert!((&l * &c - &c).amax() <= tol);
        prop_assert!((&c * &r - &c).amax() <= tol);
        prop_assert!((l.transpose() - &l).amax() <= tol);
    }

    #[test]
    fn solver_beats_random_rank_r(q in matrix(4), g_seed in prop::collection::vec(-2.0f64..2.0, 16),
                                   a in prop::collection::vec(-2.0f64..2.0, 8), b in prop::collection::vec(-2.0f64..2.0, 8),
                                   r in 0usize..3) {
        let k = q.ncols();
        let n = 4;
        let g = Mat::from_fn(n, k, |i, j| g_seed[i * 4 + j]);
        let r = r.min(q.nrows()).min(n);
        let sol = matalg::rank_constrained_solve(&q, &g, r).unwrap();
        let best = matalg::frob2(&(&q - &sol.p * &g));
        // a random P of rank ≤ r
        let left = Mat::from_fn(q.nrows(), r, |i, j| a[(i * 2 + j) % 8]);
        let right = Mat::from_fn(r, n, |i, j| b[(i * 4 + j) % 8]);
        let other = matalg::frob2(&(&q - left * right * &g));
        prop_assert!(best.sqrt() <= other.sqrt() + 1e-8);
        prop_assert!(matalg::svd(&sol.p).unwrap().rank(1e-9) <= r);
    }

    #[test]
    fn sqrt_of_gram(a in matrix(6)) {
        let m = &a * a.transpose();
        let r = matalg::sqrt_psd(&m).unwrap();
        prop_assert!((&r * &r - &m).amax() <= 1e-8 * m.amax().max(1.0));
        prop_assert!((r.transpose() - &r).amax() <= 1e-12 * m.amax().max(1.0));
    }

    #[test]
    fn pinv_of_root_is_root_of_pinv(a in low_rank(6)) {
        let m = &a * a.transpose();
        let lhs = matalg::pinv(&matalg::sqrt_psd(&m).unwrap(), 0.0).unwrap();
        let rhs = matalg::sqrt_psd(&matalg::pinv(&m, 0.0).unwrap()).unwrap();
        prop_assert!((&lhs - &rhs).amax() <= 1e-6 * lhs.amax().max(1.0));
    }
}

#[test]
fn tied_singular_values_are_flagged() {
    let q = matalg::diag(&[2.0, 2.0, 1.0]);
    let sol = matalg::rank_constrained_solve(&q, &Mat::identity(3, 3), 1).unwrap();
    assert!(sol.nonunique());
    assert!((matalg::frob2(&(&q - &sol.p)) - 5.0).abs() < 1e-12);
    let again = matalg::rank_constrained_solve(&q, &Mat::identity(3, 3), 1).unwrap();
    assert_eq!(sol.p, again.p);
}

#[test]
fn singular_constraint_matrix_is_handled() {
    let g = Mat::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 0.0]);
    let q = Mat::from_row_slice(2, 3, &[1.0, -1.0, 0.5, 0.0, 2.0, 1.0]);
    let sol = matalg::rank_constrained_solve(&q, &g, 2).unwrap();
    assert!(sol.p.iter().all(|v| v.is_finite()));
    // the best any P can do is project Q onto the row space of G
    let rg = matalg::right_proj(&g).unwrap();
    let floor = matalg::frob2(&(&q - &q * &rg));
    assert!((matalg::frob2(&(&q - &sol.p * &g)) - floor).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_converges_on_roundoff_columns(a in low_rank(10), noise in prop::collection::vec(-1.0f64..1.0, 100)) {
        let c = Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] + noise[i * 10 + j] * 1e-17 * a.norm());
        let g = matalg::sqrt_psd(&(&c * c.transpose())).unwrap();
        let f = matalg::svd(&g).unwrap();
        prop_assert!((f.reconstruct() - &g).norm() <= 1e-10 * g.norm().max(1.0));
    }
}
