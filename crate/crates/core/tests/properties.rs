use approx::assert_relative_eq;
use lsbe::estimates::{kw, mu_rank_one};
use lsbe::exact::{mu_exact, mu_exact_vec, mu_sigma_min};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (2usize..12).prop_flat_map(|m| (Just(m), 1usize..=m.min(5)))
}

fn pair() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>)> {
    dims().prop_flat_map(|(m, n)| {
        (
            proptest::collection::vec(-5.0f64..5.0, m * n).prop_map(move |v| DMatrix::from_vec(m, n, v)),
            proptest::collection::vec(-5.0f64..5.0, m).prop_map(DVector::from_vec),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn positive_homogeneity((a, r) in pair(), c in 0.01f64..100.0) {
        prop_assume!(r.norm() > 1e-3);
        let mu = mu_exact_vec(&a, &r).mu;
        let scaled = mu_exact_vec(&(&a * c), &(&r * c)).mu;
        assert_relative_eq!(scaled, c * mu, max_relative = 1e-9, epsilon = 1e-12);
    }

    #[test]
    fn eig_and_sigma_min_agree((a, r) in pair()) {
        let e = mu_exact_vec(&a, &r).mu;
        let s = mu_sigma_min(&a, &r).mu;
        assert_relative_eq!(e, s, max_relative = 1e-8, epsilon = 1e-12);
    }

    #[test]
    fn bounded_by_residual_and_kw_sandwich((a, r) in pair()) {
        let mu = mu_exact_vec(&a, &r).mu;
        prop_assert!(mu <= r.norm() * (1.0 + 1e-12));
        let nu = kw(&a, &r);
        if nu > 1e-8 {
            prop_assert!(mu / nu >= 1.0 - 1e-10);
            prop_assert!(mu / nu <= 2f64.sqrt() + 1e-10);
        }
    }

    #[test]
    fn swapping_roles_is_symmetric(
        a in proptest::collection::vec(-3.0f64..3.0, 6),
        r in proptest::collection::vec(-3.0f64..3.0, 6),
    ) {
        let (a, r) = (DMatrix::from_vec(6, 1, a), DMatrix::from_vec(6, 1, r));
        let x = mu_exact(&a, &r).mu;
        let y = mu_exact(&r, &a).mu;
        assert_relative_eq!(x, y, max_relative = 1e-10, epsilon = 1e-12);
    }

    #[test]
    fn rank_one_closed_form(a in proptest::collection::vec(-3.0f64..3.0, 1..10), seed in any::<u64>()) {
        let m = a.len();
        let a = DVector::from_vec(a);
        let r = DVector::from_fn(m, |i, _| ((seed >> (i % 60)) & 7) as f64 - 3.5);
        let am = DMatrix::from_column_slice(m, 1, a.as_slice());
        let closed = mu_rank_one(&a, &r).unwrap();
        assert_relative_eq!(closed, mu_exact_vec(&am, &r).mu, max_relative = 1e-9, epsilon = 1e-12);
    }
}
