use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stiga::sparse::{ldlt_solve, lu_solve, SparseMatrix};
use stiga::Error;

fn rel_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: f64 = ax.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    r / b.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Random sparse matrix: `density` off-diagonal fill, diagonally dominant.
fn random_dominant(n: usize, density: f64, symmetric: bool, rng: &mut ChaCha8Rng) -> SparseMatrix {
    let mut t = Vec::new();
    let mut rowsum = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || (symmetric && j < i) || !rng.random_bool(density) {
                continue;
            }
            let v: f64 = rng.random_range(-1.0..1.0);
            t.push((i, j, v));
            rowsum[i] += v.abs();
            if symmetric {
                t.push((j, i, v));
                rowsum[j] += v.abs();
            }
        }
    }
    for (i, s) in rowsum.iter().enumerate() {
        t.push((i, i, s + rng.random_range(0.5..2.0)));
    }
    SparseMatrix::from_triplets(n, n, &t).unwrap()
}

#[test]
fn identity_and_small_systems() {
    let b = vec![1.0, -2.0, 3.5];
    assert_eq!(lu_solve(&SparseMatrix::identity(3), &b).unwrap(), b);
    let a = SparseMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
    let x = lu_solve(&a, &[3.0, 5.0]).unwrap();
    assert_abs_diff_eq!(x[0], 0.8, epsilon = 1e-14);
    assert_abs_diff_eq!(x[1], 1.4, epsilon = 1e-14);
    let d = SparseMatrix::from_dense(&[vec![4.0, 0.0], vec![0.0, 9.0]]);
    let x = ldlt_solve(&d, &[8.0, 27.0]).unwrap();
    assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(x[1], 3.0, epsilon = 1e-15);
}

#[test]
fn permuted_diagonal() {
    // row i has a single entry at column (i + 2) % 5
    let t: Vec<_> = (0..5).map(|i| (i, (i + 2) % 5, (i + 1) as f64)).collect();
    let a = SparseMatrix::from_triplets(5, 5, &t).unwrap();
    let b = vec![1.0; 5];
    let x = lu_solve(&a, &b).unwrap();
    for i in 0..5 {
        assert_abs_diff_eq!(x[(i + 2) % 5], 1.0 / (i + 1) as f64, epsilon = 1e-15);
    }
}

#[test]
fn indefinite_matrix_is_rejected() {
    let a = SparseMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, -1.0]]);
    assert!(matches!(ldlt_solve(&a, &[1.0, 1.0]), Err(Error::NotSpd { .. })));
    // the general solver still handles it
    let x = lu_solve(&a, &[1.0, 1.0]).unwrap();
    assert_eq!(x, vec![1.0, -1.0]);
}

#[test]
fn singular_and_mismatched_systems_fail() {
    let s = SparseMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
    assert!(lu_solve(&s, &[1.0, 1.0]).is_err());
    assert!(lu_solve(&SparseMatrix::identity(3), &[1.0, 2.0]).is_err());
}

#[test]
fn random_instances_meet_the_residual_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for k in 0..100 {
        let n = rng.random_range(5..80);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spd = random_dominant(n, 0.1, true, &mut rng);
        assert!(spd.is_symmetric(0.0));
        let x = ldlt_solve(&spd, &b).unwrap();
        assert!(rel_residual(&spd, &x, &b) <= 1e-10, "spd instance {k}");
        let gen = random_dominant(n, 0.1, false, &mut rng);
        let x = lu_solve(&gen, &b).unwrap();
        assert!(rel_residual(&gen, &x, &b) <= 1e-10, "general instance {k}");
    }
}

proptest! {
    #[test]
    fn triplets_sum_duplicates(entries in prop::collection::vec((0usize..6, 0usize..6, -5.0f64..5.0), 0..40)) {
        let a = SparseMatrix::from_triplets(6, 6, &entries).unwrap();
        let mut dense = vec![vec![0.0; 6]; 6];
        for &(i, j, v) in &entries {
            dense[i][j] += v;
        }
        for i in 0..6 {
            for j in 0..6 {
                prop_assert!((a.get(i, j) - dense[i][j]).abs() < 1e-12);
            }
        }
        let at = a.transpose();
        for i in 0..6 {
            for j in 0..6 {
                prop_assert_eq!(at.get(i, j), a.get(j, i));
            }
        }
    }
}
