mod common;

use common::*;
use gridsep::linalg::{hermitian_solve, inner, principal_eigvec, weighted_normal_equations, CMatrix, CVector};
use gridsep::Error;

#[test]
fn solve_matches_gaussian_elimination() {
    let mut r = rng(1);
    for n in 1..=12 {
        for _ in 0..5 {
            let a = random_hpd(&mut r, n, 0.5);
            let b = random_vec(&mut r, n);
            let x = hermitian_solve(&a, &b, 0.0).unwrap();
            let oracle = gauss_solve(to_rows(&a), b.clone());
            let scale = oracle.iter().map(|z| z.norm()).fold(1.0, f64::max);
            assert!(max_abs_diff(&x, &oracle) <= 1e-9 * scale, "n = {n}");
        }
    }
}

#[test]
fn indefinite_hermitian_falls_back_to_lu() {
    let mut r = rng(2);
    for n in 2..=6 {
        let mut a = random_hpd(&mut r, n, 1.0);
        for i in 0..n {
            a[(i, i)] -= C::new(if i % 2 == 0 { 50.0 } else { 0.0 }, 0.0);
        }
        let b = random_vec(&mut r, n);
        let x = hermitian_solve(&a, &b, 0.0).unwrap();
        let residual = a.matvec(&x);
        assert!(max_abs_diff(&residual, &b) < 1e-8);
    }
}

#[test]
fn singular_matrix_is_rank_deficient() {
    let v = vec![C::new(1.0, 0.0), C::new(0.0, 1.0), C::new(2.0, -1.0)];
    let mut a = CMatrix::zeros(3, 3);
    a.add_outer(&v, 1.0);
    let err = hermitian_solve(&a, &[C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(3.0, 0.0)], 0.0);
    assert!(matches!(err, Err(Error::RankDeficient { .. })));
}

#[test]
fn principal_eigenvalue_matches_jacobi() {
    let mut r = rng(3);
    for _ in 0..10 {
        let a = random_hpd(&mut r, 8, 0.0);
        let v = principal_eigvec(&a).unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-10);
        let av = a.matvec(&v);
        let rayleigh = inner(&v, &av).re;
        let top = jacobi_eigenvalues(&a)[0];
        assert!((rayleigh - top).abs() <= 1e-8 * top, "{rayleigh} vs {top}");
        // eigenvector equation
        let resid: Vec<C> = av.iter().zip(v.iter()).map(|(x, y)| x - y * rayleigh).collect();
        assert!(CVector(resid).norm() <= 1e-6 * top);
    }
}

#[test]
fn rayleigh_quotient_is_maximal() {
    let mut r = rng(4);
    let a = random_hpd(&mut r, 6, 0.1);
    let v = principal_eigvec(&a).unwrap();
    let best = inner(&v, &a.matvec(&v)).re;
    for _ in 0..200 {
        let u = CVector(random_vec(&mut r, 6));
        let u = CVector(u.iter().map(|z| z / u.norm()).collect());
        assert!(inner(&u, &a.matvec(&u)).re <= best * (1.0 + 1e-12));
    }
}

#[test]
fn eigenvector_phase_convention() {
    let mut r = rng(5);
    for _ in 0..20 {
        let a = random_hpd(&mut r, 4, 0.0);
        let v = principal_eigvec(&a).unwrap();
        let first = v.iter().find(|z| z.norm() > 1e-12).unwrap();
        assert_eq!(first.im, 0.0);
        assert!(first.re >= 0.0);
    }
}

#[test]
fn start_vector_orthogonal_to_ones_still_converges() {
    // dominant eigenvector (1, −1)/√2 is orthogonal to the all-ones vector
    let a = CMatrix::from_fn(2, 2, |i, j| C::new(if i == j { 2.0 } else { -1.0 }, 0.0));
    let v = principal_eigvec(&a).unwrap();
    let lambda = inner(&v, &a.matvec(&v)).re;
    assert!((lambda - 3.0).abs() < 1e-10);
}

#[test]
fn eigvec_rejects_bad_input() {
    assert!(matches!(
        principal_eigvec(&CMatrix::zeros(3, 3)),
        Err(Error::ZeroMatrix)
    ));
    let mut a = CMatrix::identity(2);
    a[(0, 1)] = C::new(1.0, 0.0);
    assert!(matches!(principal_eigvec(&a), Err(Error::NotHermitian(_))));
}

fn objective(frames: &[CVector], targets: &[C], weights: &[f64], w: &[C]) -> f64 {
    frames
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((x, y), l)| l * (y - inner(w, x)).norm_sqr())
        .sum()
}

fn random_problem(r: &mut rand_chacha::ChaCha8Rng, dim: usize, frames: usize) -> (Vec<CVector>, Vec<C>, Vec<f64>) {
    let xs: Vec<CVector> = (0..frames).map(|_| CVector(random_vec(r, dim))).collect();
    let ys = random_vec(r, frames);
    let ws = (0..frames).map(|_| uniform(r, 0.1, 2.0)).collect();
    (xs, ys, ws)
}

#[test]
fn weighted_solution_is_stationary_minimum() {
    let mut r = rng(6);
    for _ in 0..10 {
        let (xs, ys, ws) = random_problem(&mut r, 5, 30);
        let w = weighted_normal_equations(&xs, &ys, &ws).unwrap();
        let base = objective(&xs, &ys, &ws, &w);
        for _ in 0..20 {
            let dir = random_vec(&mut r, 5);
            let moved: Vec<C> = w.iter().zip(&dir).map(|(a, b)| a + b * 1e-3).collect();
            assert!(objective(&xs, &ys, &ws, &moved) >= base);
        }
    }
}

#[test]
fn weight_scaling_does_not_move_the_solution() {
    let mut r = rng(7);
    let (xs, ys, ws) = random_problem(&mut r, 4, 25);
    let a = weighted_normal_equations(&xs, &ys, &ws).unwrap();
    let halved: Vec<f64> = ws.iter().map(|w| w / 2.0).collect();
    let b = weighted_normal_equations(&xs, &ys, &halved).unwrap();
    assert!(max_abs_diff(&a, &b) < 1e-10);
}

#[test]
fn noiseless_targets_recover_the_generating_filter() {
    let mut r = rng(8);
    let g = random_vec(&mut r, 6);
    let xs: Vec<CVector> = (0..40).map(|_| CVector(random_vec(&mut r, 6))).collect();
    let ys: Vec<C> = xs.iter().map(|x| inner(&g, x)).collect();
    let ws: Vec<f64> = (0..40).map(|_| uniform(&mut r, 0.5, 1.5)).collect();
    let w = weighted_normal_equations(&xs, &ys, &ws).unwrap();
    assert!(max_abs_diff(&w, &g) < 1e-8);
}

#[test]
fn weighted_solve_matches_elimination_oracle() {
    let mut r = rng(9);
    for _ in 0..20 {
        let dim = 1 + (uniform(&mut r, 0.0, 8.0) as usize);
        let (xs, ys, ws) = random_problem(&mut r, dim, 3 * dim + 5);
        let w = weighted_normal_equations(&xs, &ys, &ws).unwrap();
        let mut a = vec![vec![C::new(0.0, 0.0); dim]; dim];
        let mut b = vec![C::new(0.0, 0.0); dim];
        for ((x, y), l) in xs.iter().zip(&ys).zip(&ws) {
            for i in 0..dim {
                for j in 0..dim {
                    a[i][j] += x[i] * x[j].conj() * *l;
                }
                b[i] += x[i] * y.conj() * *l;
            }
        }
        let oracle = gauss_solve(a, b);
        assert!(max_abs_diff(&w, &oracle) < 1e-8);
    }
}

#[test]
fn weighted_solve_rejects_bad_weights() {
    let xs = vec![CVector(vec![C::new(1.0, 0.0)])];
    assert!(weighted_normal_equations(&xs, &[C::new(1.0, 0.0)], &[0.0]).is_err());
    assert!(weighted_normal_equations(&[], &[], &[]).is_err());
}
