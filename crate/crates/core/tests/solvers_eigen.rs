//! Solver verification: LDL^T against dense solves, inertia against known
//! signatures, conjugate gradients against the direct path, and the sliced
//! Lanczos eigensolver against the dense oracle on pencils whose spectra are
//! known in closed form.

use nalgebra::DMatrix;
use nalgebra_sparse::CsrMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use subdforms::solvers::{
    self, EigOptions, LdlFactor, Pivoting, SolverError,
};
use subdforms::sparse;

fn csr_from_dense(a: &DMatrix<f64>) -> CsrMatrix<f64> {
    let mut triplets = Vec::new();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if a[(i, j)] != 0.0 {
                triplets.push((i, j, a[(i, j)]));
            }
        }
    }
    sparse::csr_from_triplets(a.nrows(), a.ncols(), triplets)
}

/// Dense symmetric positive definite matrix with a deterministic seed.
fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let r = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
    let mut a = &r * r.transpose();
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    a
}

fn diag_csr(values: &[f64]) -> CsrMatrix<f64> {
    let triplets: Vec<(usize, usize, f64)> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (i, i, v))
        .collect();
    sparse::csr_from_triplets(values.len(), values.len(), triplets)
}

#[test]
fn ldl_solves_a_known_system() {
    // [[4,1],[1,3]] x = [1,2] has the closed-form solution [1/11, 7/11].
    let a = csr_from_dense(&DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]));
    let f = LdlFactor::factor(&a, Pivoting::RequireSpd).unwrap();
    let x = f.solve(&[1.0, 2.0]);
    assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
    assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    assert_eq!(f.n_negative(), 0);
}

#[test]
fn ldl_matches_dense_solve_on_random_spd() {
    let ad = random_spd(80, 11);
    let a = csr_from_dense(&ad);
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let b: Vec<f64> = (0..80).map(|_| rng.gen::<f64>() - 0.5).collect();
    let f = LdlFactor::factor(&a, Pivoting::RequireSpd).unwrap();
    let x = f.solve(&b);
    let xd = ad
        .clone()
        .lu()
        .solve(&nalgebra::DVector::from_column_slice(&b))
        .unwrap();
    for i in 0..80 {
        assert!((x[i] - xd[i]).abs() < 1e-9, "component {i}");
    }
}

#[test]
fn ldl_inertia_matches_known_signatures() {
    // Diagonal matrices wear their inertia openly.
    let a = diag_csr(&[2.0, -3.0, 5.0, -1.0, 7.0]);
    let f = LdlFactor::factor(&a, Pivoting::AllowIndefinite).unwrap();
    assert_eq!(f.n_negative(), 2);

    // A dense congruence does not change the signature.
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let n = 30;
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
    let mut s = DMatrix::<f64>::zeros(n, n);
    let negatives = 11;
    for i in 0..n {
        s[(i, i)] = if i < negatives { -1.0 } else { 1.0 };
    }
    let a = &g * s * g.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let f = LdlFactor::factor(&csr_from_dense(&a), Pivoting::AllowIndefinite).unwrap();
    assert_eq!(f.n_negative(), negatives);
}

#[test]
fn ldl_rejects_indefinite_input_when_spd_required() {
    let a = diag_csr(&[1.0, -1.0]);
    match LdlFactor::factor(&a, Pivoting::RequireSpd) {
        Err(SolverError::NotSpd { .. }) => {}
        other => panic!("expected NotSpd, got {other:?}"),
    }
}

#[test]
fn cg_agrees_with_direct_solve() {
    let ad = random_spd(120, 31);
    let a = csr_from_dense(&ad);
    let mut rng = ChaCha20Rng::seed_from_u64(32);
    let b: Vec<f64> = (0..120).map(|_| rng.gen::<f64>() - 0.5).collect();
    let direct = LdlFactor::factor(&a, Pivoting::RequireSpd).unwrap().solve(&b);
    let (iterative, iters) = solvers::cg_jacobi(&a, &b, 1e-13, 10_000).unwrap();
    assert!(iters > 0);
    let diff = direct
        .iter()
        .zip(&iterative)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    assert!(diff < 1e-9, "direct and cg differ by {diff:.3e}");
}

#[test]
fn dense_gevp_recovers_diagonal_pencil() {
    // C = diag(c), M = diag(m) has eigenvalues c_i / m_i.
    let c = diag_csr(&[0.0, 2.0, 2.0, 8.0, 18.0]);
    let m = diag_csr(&[1.0, 2.0, 1.0, 2.0, 2.0]);
    let vals = solvers::dense_gevp(&c, &m).unwrap();
    let expected = [0.0, 1.0, 2.0, 4.0, 9.0];
    for (v, e) in vals.iter().zip(expected) {
        assert!((v - e).abs() < 1e-12, "got {v}, expected {e}");
    }
}

#[test]
fn count_below_matches_dense_counts() {
    let n = 40;
    let cd = random_spd(n, 41);
    let md = random_spd(n, 42);
    let c = csr_from_dense(&cd);
    let m = csr_from_dense(&md);
    let vals = solvers::dense_gevp(&c, &m).unwrap();
    for tau in [0.1, 0.5, 1.0, vals[n / 2] + 1e-6, vals[n - 1] + 1.0] {
        let dense_count = vals.iter().filter(|&&v| v < tau).count();
        let sparse_count = solvers::count_below(&c, &m, tau).unwrap();
        assert_eq!(sparse_count, dense_count, "tau = {tau}");
    }
}

#[test]
fn lanczos_agrees_with_dense_oracle_on_random_pencil() {
    // 50 unknowns sits above the internal dense cutoff, so this exercises
    // the sliced shift-invert path end to end.
    let n = 50;
    let cd = random_spd(n, 51);
    let md = random_spd(n, 52);
    let c = csr_from_dense(&cd);
    let m = csr_from_dense(&md);
    let dense = solvers::dense_gevp(&c, &m).unwrap();
    let opts = EigOptions {
        n_eigs: 10,
        ..EigOptions::default()
    };
    let spectrum = solvers::solve_gevp(&c, &m, &opts).unwrap();
    assert_eq!(spectrum.zero_count, 0);
    assert_eq!(spectrum.eigenvalues.len(), 10);
    for (i, (lam, reference)) in spectrum.eigenvalues.iter().zip(&dense).enumerate() {
        assert!(
            (lam - reference).abs() <= 1e-9 * reference.abs().max(1.0),
            "eigenvalue {i}: lanczos {lam:.15e} vs dense {reference:.15e}"
        );
    }
    assert!(spectrum.max_residual <= 1e-8);
}

#[test]
fn lanczos_counts_the_kernel_of_a_disconnected_laplacian() {
    // Two disjoint path graphs: the Laplacian kernel is one constant vector
    // per component.
    let n = 60;
    let mut triplets = Vec::new();
    for start in [0, 30] {
        for i in start..start + 29 {
            triplets.push((i, i, 1.0));
            triplets.push((i + 1, i + 1, 1.0));
            triplets.push((i, i + 1, -1.0));
            triplets.push((i + 1, i, -1.0));
        }
    }
    let c = sparse::csr_from_triplets(n, n, triplets);
    let m_values: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
    let m = diag_csr(&m_values);
    let dense: Vec<f64> = solvers::dense_gevp(&c, &m).unwrap();
    let opts = EigOptions {
        n_eigs: 6,
        ..EigOptions::default()
    };
    let spectrum = solvers::solve_gevp(&c, &m, &opts).unwrap();
    assert_eq!(spectrum.zero_count, 2);
    let nonzero_dense: Vec<f64> = dense
        .iter()
        .copied()
        .filter(|&v| v > spectrum.zero_threshold)
        .take(6)
        .collect();
    for (lam, reference) in spectrum.eigenvalues.iter().zip(&nonzero_dense) {
        assert!(
            (lam - reference).abs() <= 1e-9,
            "lanczos {lam:.15e} vs dense {reference:.15e}"
        );
    }
}

#[test]
fn lanczos_resolves_multiplicities() {
    // Diagonal pencil with the multiplicity pattern of a square cavity
    // spectrum; the eigensolver must report every copy.
    let mut c_diag = vec![0.0; 8];
    c_diag.extend_from_slice(&[
        1.0, 1.0, 2.0, 4.0, 4.0, 5.0, 5.0, 8.0, 9.0, 9.0, 10.0, 10.0, 13.0, 13.0,
    ]);
    c_diag.extend((0..40).map(|i| 20.0 + i as f64));
    let n = c_diag.len();
    let c = diag_csr(&c_diag);
    let m = diag_csr(&vec![1.0; n]);
    let opts = EigOptions {
        n_eigs: 10,
        ..EigOptions::default()
    };
    let spectrum = solvers::solve_gevp(&c, &m, &opts).unwrap();
    assert_eq!(spectrum.zero_count, 8);
    let expected = [1.0, 1.0, 2.0, 4.0, 4.0, 5.0, 5.0, 8.0, 9.0, 9.0];
    for (lam, e) in spectrum.eigenvalues.iter().zip(expected) {
        assert!((lam - e).abs() < 1e-9, "got {lam}, expected {e}");
    }
}

#[test]
fn two_shifts_agree() {
    let n = 64;
    let cd = random_spd(n, 61);
    let md = random_spd(n, 62);
    let c = csr_from_dense(&cd);
    let m = csr_from_dense(&md);
    let a = solvers::solve_gevp(
        &c,
        &m,
        &EigOptions {
            n_eigs: 8,
            shift: 0.5,
            ..EigOptions::default()
        },
    )
    .unwrap();
    let b = solvers::solve_gevp(
        &c,
        &m,
        &EigOptions {
            n_eigs: 8,
            shift: 2.0,
            ..EigOptions::default()
        },
    )
    .unwrap();
    for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
        assert!(
            (x - y).abs() <= 1e-9 * x.abs().max(1.0),
            "shift 0.5 gives {x:.15e}, shift 2.0 gives {y:.15e}"
        );
    }
}

#[test]
fn fixed_seed_reproduces_the_spectrum_exactly() {
    let n = 56;
    let cd = random_spd(n, 71);
    let md = random_spd(n, 72);
    let c = csr_from_dense(&cd);
    let m = csr_from_dense(&md);
    let opts = EigOptions {
        n_eigs: 5,
        seed: 0xfeed,
        ..EigOptions::default()
    };
    let a = solvers::solve_gevp(&c, &m, &opts).unwrap();
    let b = solvers::solve_gevp(&c, &m, &opts).unwrap();
    assert_eq!(a.eigenvalues, b.eigenvalues);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn eigenvectors_satisfy_the_pencil_equation() {
    let n = 52;
    let cd = random_spd(n, 81);
    let md = random_spd(n, 82);
    let c = csr_from_dense(&cd);
    let m = csr_from_dense(&md);
    let opts = EigOptions {
        n_eigs: 4,
        want_vectors: true,
        ..EigOptions::default()
    };
    let spectrum = solvers::solve_gevp(&c, &m, &opts).unwrap();
    let vecs = spectrum.eigenvectors.as_ref().expect("vectors requested");
    assert_eq!(vecs.ncols(), 4);
    for (j, &lam) in spectrum.eigenvalues.iter().enumerate() {
        let x: Vec<f64> = vecs.column(j).iter().copied().collect();
        let mut cx = vec![0.0; n];
        let mut mx = vec![0.0; n];
        sparse::matvec(&c, &x, &mut cx);
        sparse::matvec(&m, &x, &mut mx);
        let num: f64 = cx
            .iter()
            .zip(&mx)
            .map(|(a, b)| (a - lam * b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = mx.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den <= 1e-8, "eigenpair {j} residual {:.3e}", num / den);
    }
}

#[test]
fn fill_reducing_order_is_a_permutation() {
    let ad = random_spd(100, 91);
    let a = csr_from_dense(&ad);
    let perm = solvers::fill_reducing_order(&a);
    let mut seen = vec![false; 100];
    for &p in &perm {
        assert!(!seen[p], "index {p} repeated");
        seen[p] = true;
    }
    assert!(seen.iter().all(|&s| s));
}
