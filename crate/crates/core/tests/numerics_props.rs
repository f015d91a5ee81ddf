mod common;

use gridcert::certifier::loadability_polynomial;
use gridcert::numerics::{induced_norm, min_positive_real_root, poly_eval, solve_linear, sup_norm};
use gridcert::DenseMatrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-10.0f64..10.0, rows * cols)
        .prop_map(move |d| DenseMatrix::from_row_major(rows, cols, d).unwrap())
}

proptest! {
    #[test]
    fn submultiplicative((a, b) in (1usize..7, 1usize..7, 1usize..7)
        .prop_flat_map(|(m, k, n)| (matrix(m, k), matrix(k, n))))
    {
        let ab = a.matmul(&b);
        prop_assert!(induced_norm(&ab) <= induced_norm(&a) * induced_norm(&b) * (1.0 + 1e-12));
    }

    #[test]
    fn norm_consistency((a, x) in (1usize..8, 1usize..8)
        .prop_flat_map(|(m, n)| (matrix(m, n), prop::collection::vec(-5.0f64..5.0, n))))
    {
        let ax = a.matvec(&x);
        prop_assert!(sup_norm(&ax).unwrap() <= induced_norm(&a) * sup_norm(&x).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn loadability_root_has_no_earlier_sign_change(rho in 0.01f64..2.0, mu_rho in 0.0f64..0.9) {
        let mu = mu_rho / rho;
        let coeffs = loadability_polynomial(rho, mu);
        let am = min_positive_real_root(&coeffs).unwrap();
        let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        prop_assert!(poly_eval(&coeffs, am).abs() <= 1e-10 * scale.max(1.0));
        let s0 = poly_eval(&coeffs, 1e-12 * am);
        for k in 1..200 {
            let x = am * k as f64 / 200.0;
            prop_assert!(poly_eval(&coeffs, x) * s0 > 0.0, "sign change at {x} before root {am}");
        }
    }
}

#[test]
fn thousand_random_solves_have_small_residual() {
    let mut rng = common::rng(7);
    for trial in 0..1000 {
        let n = 1 + trial % 12;
        let a = common::well_conditioned(&mut rng, n);
        let b: Vec<f64> = common::random_matrix(&mut rng, n, 1).column(0).into_inner();
        let x = solve_linear(&a, &b).unwrap();
        let r = a.matvec(&x).sub(&b.clone().into());
        let bound = 1e-12 * induced_norm(&a) * (sup_norm(&x).unwrap() + 1.0);
        assert!(sup_norm(&r).unwrap() <= bound, "trial {trial}: residual {}", sup_norm(&r).unwrap());
    }
}
