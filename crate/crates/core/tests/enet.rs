use lcen::enet::{solve_gram, Gram};
use lcen::{fit_enet_matrix, EnetConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn problem() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>)> {
    (10usize..40, 1usize..6).prop_flat_map(|(n, p)| {
        (
            prop::collection::vec(-3.0f64..3.0, n * p).prop_map(move |v| DMatrix::from_vec(n, p, v)),
            prop::collection::vec(-5.0f64..5.0, n).prop_map(DVector::from_vec),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Elastic-net optimality: with g = X'(y - Xb)/n, active coordinates
    /// satisfy g_j = l1 sign(b_j) + l2 b_j and inactive ones |g_j| <= l1.
    #[test]
    fn solutions_satisfy_kkt((x, y) in problem(), alpha in 0.01f64..2.0, rho in 0.05f64..1.0) {
        let cfg = EnetConfig::new(alpha, rho);
        let fit = fit_enet_matrix(&x, &y, &cfg).unwrap();
        prop_assert!(fit.converged);
        let n = x.nrows() as f64;
        let g = x.transpose() * (&y - &x * &fit.beta) / n;
        let (l1, l2) = (alpha * rho, alpha * (1.0 - rho));
        let scale = 1e-5 * (1.0 + g.amax());
        for (j, b) in fit.beta.iter().enumerate() {
            if *b != 0.0 {
                prop_assert!((g[j] - l1 * b.signum() - l2 * b).abs() <= scale, "active {j}: {} vs {}", g[j], l1 * b.signum() + l2 * b);
            } else {
                prop_assert!(g[j].abs() <= l1 + scale, "inactive {j}: {}", g[j]);
            }
        }
    }

    #[test]
    fn warm_start_does_not_change_the_optimum((x, y) in problem(), alpha in 0.01f64..1.0) {
        let gram = Gram::new(&x, &y).unwrap();
        let cfg = EnetConfig::new(alpha, 0.7);
        let (cold, _, _) = solve_gram(&gram, &cfg, None).unwrap();
        let warm_from = DVector::from_element(x.ncols(), 1.0);
        let (warm, _, _) = solve_gram(&gram, &cfg, Some(&warm_from)).unwrap();
        prop_assert!((gram.objective(&cold, &cfg) - gram.objective(&warm, &cfg)).abs() <= 1e-9 * (1.0 + gram.objective(&cold, &cfg)));
    }
}

#[test]
fn huge_penalty_zeroes_everything() {
    let x = DMatrix::from_fn(20, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
    let y = DVector::from_fn(20, |i, _| i as f64);
    let fit = fit_enet_matrix(&x, &y, &EnetConfig::lasso(1e6)).unwrap();
    assert!(fit.beta.iter().all(|b| *b == 0.0));
}
