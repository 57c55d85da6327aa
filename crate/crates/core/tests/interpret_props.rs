//! Reconstruction and loading identities of the spectral summary.

use lowrank_bandit::interpret::{loading_score, scaled_action_loadings, spectral_decompose};
use lowrank_bandit::{ActionVector, RepresentationMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, v: &[f64]) -> RepresentationMatrix<f64> {
    RepresentationMatrix::new(DMatrix::from_fn(rows, cols, |i, j| v[i * cols + j])).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reconstruction(rows in 1usize..7, cols in 1usize..7, v in prop::collection::vec(-5.0f64..5.0, 36)) {
        let theta = matrix(rows, cols, &v);
        let rep = spectral_decompose(&theta, 0.0).unwrap();
        let err = (rep.reconstruct() - theta.entries()).norm();
        prop_assert!(err <= 1e-8 * theta.frobenius_norm().max(1.0));
        let gram = rep.left.tr_mul(&rep.left);
        prop_assert!((gram - DMatrix::identity(rep.effective_rank, rep.effective_rank)).norm() < 1e-8);
    }

    #[test]
    fn rank_shrinks_with_tolerance(rows in 1usize..6, cols in 1usize..6, v in prop::collection::vec(-5.0f64..5.0, 25),
                                   lo in 0.0f64..0.5, gap in 0.0f64..0.49) {
        let theta = matrix(rows, cols, &v);
        let a = spectral_decompose(&theta, lo).unwrap().effective_rank;
        let b = spectral_decompose(&theta, lo + gap).unwrap().effective_rank;
        prop_assert!(b <= a);
    }

    #[test]
    fn loadings_sum_to_mean_reward(rows in 1usize..6, cols in 1usize..6, v in prop::collection::vec(-5.0f64..5.0, 25),
                                   x in prop::collection::vec(-2.0f64..2.0, 5), a in prop::collection::vec(-2.0f64..2.0, 5)) {
        let theta = matrix(rows, cols, &v);
        let rep = spectral_decompose(&theta, 0.0).unwrap();
        let x = DVector::from_column_slice(&x[..cols]);
        let a = ActionVector::from_slice(&a[..rows]).unwrap();
        let u = scaled_action_loadings(&rep, &x).unwrap();
        let want = a.values().dot(&(theta.entries() * &x));
        prop_assert!((loading_score(&u, &a).unwrap() - want).abs() <= 1e-9 * (1.0 + want.abs()));
    }
}

#[test]
fn orthogonal_context_gives_zero_loading() {
    let theta = RepresentationMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]).unwrap();
    let rep = spectral_decompose(&theta, 0.0).unwrap();
    let u = scaled_action_loadings(&rep, &DVector::from_column_slice(&[0.0, 1.0])).unwrap();
    assert!(u.norm() < 1e-15);
}
