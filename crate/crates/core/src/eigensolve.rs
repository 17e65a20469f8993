//! Lowest eigenpairs of real symmetric operators.
//!
//! The iterative solver is a thick-restart Lanczos method with full
//! reorthogonalization. Every new Krylov vector is projected against the whole
//! basis (classical Gram-Schmidt with a second pass when cancellation is
//! detected), and the projected matrix is filled directly from those
//! projection coefficients, so after a restart the arrow coupling between kept
//! Ritz vectors and the new residual direction is recovered automatically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dense::{self, DenseError};
use crate::sparse::{materialize, LinearOperator};

/// Largest dimension accepted by the dense oracle.
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("Lanczos did not converge within {iterations} matrix-vector products (best residual {best_residual:.3e})")]
    NoConvergence { iterations: usize, best_residual: f64 },
    #[error("operator has dimension 0")]
    Empty,
    #[error("dense solver limited to dimension {limit}, got {dim}")]
    Capacity { dim: usize, limit: usize },
    #[error("need at least two states for a gap, got dimension {0}")]
    TooSmall(usize),
    #[error(transparent)]
    Dense(#[from] DenseError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Residual tolerance `||A v - E v||`.
    pub tol: f64,
    /// Maximum number of matrix-vector products per eigenpair.
    pub max_iter: usize,
    pub seed: u64,
    /// Krylov basis size before a thick restart.
    pub basis_size: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, max_iter: 5000, seed: 20240531, basis_size: 40 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigResult {
    /// One or two eigenvalues, ascending.
    pub energies: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of fresh random vectors injected after a breakdown.
    pub reseeds: usize,
    /// Set by [`lowest_two`] when the gap is below `10 * tol`.
    pub near_degenerate: bool,
}

impl EigResult {
    pub fn ground(&self) -> f64 {
        self.energies[0]
    }

    pub fn gap(&self) -> Option<f64> {
        (self.energies.len() > 1).then(|| self.energies[1] - self.energies[0])
    }
}

/// Dot product with four interleaved accumulators combined in a fixed order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for i in 4 * chunks..n {
        s0 += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3)
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn scale(v: &mut [f64], s: f64) {
    v.iter_mut().for_each(|x| *x *= s);
}

fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Remove components along `locked` (assumed orthonormal).
fn deflate(w: &mut [f64], locked: &[Vec<f64>]) {
    for _ in 0..2 {
        for u in locked {
            let c = dot(u, w);
            axpy(-c, u, w);
        }
    }
}

const CHUNK: usize = 2048;

/// `basis[i] . w` for every `i`, streaming `w` once in cache-sized chunks.
fn project(basis: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; basis.len()];
    for start in (0..w.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(w.len());
        let wc = &w[start..end];
        for (ci, v) in c.iter_mut().zip(basis) {
            *ci += dot(&v[start..end], wc);
        }
    }
    c
}

/// `w -= sum_i c[i] * basis[i]`, chunked like [`project`].
fn subtract_combination(w: &mut [f64], basis: &[Vec<f64>], c: &[f64]) {
    let n = w.len();
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let wc = &mut w[start..end];
        for (v, &ci) in basis.iter().zip(c) {
            axpy(-ci, &v[start..end], wc);
        }
    }
}

/// Project `w` against `basis` (orthonormal), returning the coefficients.
/// The two newest vectors carry the bulk of a Lanczos product and are removed
/// first; the full classical Gram-Schmidt pass is repeated when the norm drops
/// below `1/sqrt(2)` of its value.
fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut h = vec![0.0; basis.len()];
    for i in basis.len().saturating_sub(2)..basis.len() {
        let c = dot(&basis[i], w);
        axpy(-c, &basis[i], w);
        h[i] += c;
    }
    let mut before = norm(w);
    for _ in 0..3 {
        let c = project(basis, w);
        subtract_combination(w, basis, &c);
        for (hi, ci) in h.iter_mut().zip(&c) {
            *hi += ci;
        }
        let after = norm(w);
        if after >= std::f64::consts::FRAC_1_SQRT_2 * before {
            break;
        }
        before = after;
    }
    h
}

/// `sum_i y[i][col] * basis[i]` for each requested column, streaming the
/// basis once.
fn combine(basis: &[Vec<f64>], y: &[Vec<f64>], cols: usize, n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n]; cols];
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        for (i, v) in basis.iter().enumerate() {
            let vc = &v[start..end];
            for (c, x) in out.iter_mut().enumerate() {
                axpy(y[i][c], vc, &mut x[start..end]);
            }
        }
    }
    out
}

struct LowestPair {
    value: f64,
    vector: Vec<f64>,
    residual: f64,
    iterations: usize,
    reseeds: usize,
}

/// Thick-restart Lanczos for the lowest eigenpair of `A` restricted to the
/// orthogonal complement of `locked`.
fn lanczos_lowest<A: LinearOperator + ?Sized>(
    op: &A,
    opts: &SolverOptions,
    locked: &[Vec<f64>],
) -> Result<LowestPair, EigenError> {
    let n = op.dim();
    if n == 0 {
        return Err(EigenError::Empty);
    }
    let available = n - locked.len();
    let m = opts.basis_size.max(4).min(available);
    let keep = (m / 3).max(1);

    let mut reseeds = 0usize;
    let mut start = random_vector(n, opts.seed);
    deflate(&mut start, locked);
    let s = norm(&start);
    scale(&mut start, 1.0 / s);

    let mut basis: Vec<Vec<f64>> = vec![start];
    let mut t = vec![vec![0.0; m]; m];
    let mut w = vec![0.0; n];
    let mut residual_vec = vec![0.0; n];
    let mut matvecs = 0usize;
    let mut best_residual = f64::INFINITY;

    loop {
        // expand
        let j = basis.len() - 1;
        op.apply(&basis[j], &mut w);
        matvecs += 1;
        deflate(&mut w, locked);
        let wnorm0 = norm(&w);
        let h = orthogonalize(&mut w, &basis);
        // roundoff leaks toward the locked vectors are amplified by the
        // iteration (they sit at eigenvalue 0 of the projected operator)
        deflate(&mut w, locked);
        for (i, &hi) in h.iter().enumerate() {
            t[i][j] = hi;
            t[j][i] = hi;
        }
        let beta = norm(&w);
        let k = basis.len();

        // Ritz analysis on the current projected matrix
        let tk: Vec<Vec<f64>> = t[..k].iter().map(|r| r[..k].to_vec()).collect();
        let (theta, y) = dense::symmetric_eigen(&tk)?;
        let estimate = beta * y[k - 1][0].abs();
        let exhausted = k == m && k == available;
        if estimate <= opts.tol || exhausted || beta <= 1e-14 * wnorm0.max(f64::MIN_POSITIVE) {
            // assemble the Ritz vector and check its true residual
            let mut x = combine(&basis, &y, 1, n).pop().unwrap();
            deflate(&mut x, locked);
            let xn = norm(&x);
            scale(&mut x, 1.0 / xn);
            op.apply(&x, &mut residual_vec);
            matvecs += 1;
            let theta0 = dot(&x, &residual_vec);
            axpy(-theta0, &x, &mut residual_vec);
            deflate(&mut residual_vec, locked);
            let res = norm(&residual_vec);
            best_residual = best_residual.min(res);
            if res <= opts.tol || (exhausted && res <= opts.tol.max(1e-12 * theta0.abs().max(1.0))) {
                return Ok(LowestPair { value: theta0, vector: x, residual: res, iterations: matvecs, reseeds });
            }
            if exhausted {
                return Err(EigenError::NoConvergence { iterations: matvecs, best_residual });
            }
        }
        if matvecs >= opts.max_iter {
            return Err(EigenError::NoConvergence { iterations: matvecs, best_residual: best_residual.min(estimate) });
        }

        if beta <= 1e-14 * wnorm0.max(f64::MIN_POSITIVE) {
            // invariant subspace without convergence of the lowest pair:
            // continue from a fresh direction
            reseeds += 1;
            w = random_vector(n, opts.seed.wrapping_add(reseeds as u64));
            deflate(&mut w, locked);
            orthogonalize(&mut w, &basis);
            let wn = norm(&w);
            if wn == 0.0 {
                return Err(EigenError::NoConvergence { iterations: matvecs, best_residual });
            }
            scale(&mut w, 1.0 / wn);
        } else {
            scale(&mut w, 1.0 / beta);
        }

        if k < m {
            basis.push(w.clone());
            continue;
        }

        // thick restart: keep the lowest Ritz vectors, then the residual direction
        let mut kept = combine(&basis, &y, keep, n);
        for x in kept.iter_mut() {
            deflate(x, locked);
            let xn = norm(x);
            scale(x, 1.0 / xn);
        }
        for row in t.iter_mut() {
            row.iter_mut().for_each(|e| *e = 0.0);
        }
        for (c, &th) in theta.iter().take(keep).enumerate() {
            t[c][c] = th;
        }
        kept.push(w.clone());
        basis = kept;
    }
}

fn check_dim<A: LinearOperator + ?Sized>(op: &A) -> Result<(), EigenError> {
    if op.dim() == 0 {
        Err(EigenError::Empty)
    } else {
        Ok(())
    }
}

/// Lowest eigenpair.
pub fn ground_state<A: LinearOperator + ?Sized>(op: &A, opts: &SolverOptions) -> Result<EigResult, EigenError> {
    check_dim(op)?;
    let p = lanczos_lowest(op, opts, &[])?;
    Ok(EigResult {
        energies: vec![p.value],
        vectors: vec![p.vector],
        residuals: vec![p.residual],
        iterations: p.iterations,
        converged: true,
        reseeds: p.reseeds,
        near_degenerate: false,
    })
}

/// Two lowest eigenpairs; the second is found on the complement of the first.
pub fn lowest_two<A: LinearOperator + ?Sized>(op: &A, opts: &SolverOptions) -> Result<EigResult, EigenError> {
    check_dim(op)?;
    if op.dim() < 2 {
        return Err(EigenError::TooSmall(op.dim()));
    }
    let first = lanczos_lowest(op, opts, &[])?;
    let locked = vec![first.vector];
    let opts2 = SolverOptions { seed: opts.seed.wrapping_add(0x9e37_79b9), ..opts.clone() };
    let second = lanczos_lowest(op, &opts2, &locked)?;
    let [v0] = <[Vec<f64>; 1]>::try_from(locked).unwrap();
    let (mut e, mut v, mut r) = ([first.value, second.value], [v0, second.vector], [first.residual, second.residual]);
    if e[1] < e[0] {
        e.swap(0, 1);
        v.swap(0, 1);
        r.swap(0, 1);
    }
    Ok(EigResult {
        near_degenerate: e[1] - e[0] < 10.0 * opts.tol,
        energies: e.to_vec(),
        vectors: v.to_vec(),
        residuals: r.to_vec(),
        iterations: first.iterations + second.iterations,
        converged: true,
        reseeds: first.reseeds + second.reseeds,
    })
}

fn dense_lowest<A: LinearOperator + ?Sized>(op: &A, count: usize) -> Result<EigResult, EigenError> {
    let n = op.dim();
    if n == 0 {
        return Err(EigenError::Empty);
    }
    if n > DENSE_LIMIT {
        return Err(EigenError::Capacity { dim: n, limit: DENSE_LIMIT });
    }
    if n < count {
        return Err(EigenError::TooSmall(n));
    }
    let a = materialize(op);
    let (vals, vecs) = dense::symmetric_eigen(&a)?;
    let mut vectors = Vec::new();
    let mut residuals = Vec::new();
    let mut av = vec![0.0; n];
    for c in 0..count {
        let x: Vec<f64> = vecs.iter().map(|row| row[c]).collect();
        op.apply(&x, &mut av);
        axpy(-vals[c], &x, &mut av);
        residuals.push(norm(&av));
        vectors.push(x);
    }
    Ok(EigResult {
        near_degenerate: count > 1 && vals[1] - vals[0] < 1e-12 * vals[0].abs().max(1.0),
        energies: vals[..count].to_vec(),
        vectors,
        residuals,
        iterations: 0,
        converged: true,
        reseeds: 0,
    })
}

/// Dense oracle for the lowest eigenpair.
pub fn dense_ground<A: LinearOperator + ?Sized>(op: &A) -> Result<EigResult, EigenError> {
    dense_lowest(op, 1)
}

/// Dense oracle for the two lowest eigenpairs.
pub fn dense_lowest_two<A: LinearOperator + ?Sized>(op: &A) -> Result<EigResult, EigenError> {
    dense_lowest(op, 2)
}

/// Full ascending spectrum (dense, small operators only).
pub fn dense_spectrum<A: LinearOperator + ?Sized>(op: &A) -> Result<Vec<f64>, EigenError> {
    let n = op.dim();
    if n > DENSE_LIMIT {
        return Err(EigenError::Capacity { dim: n, limit: DENSE_LIMIT });
    }
    Ok(dense::symmetric_eigenvalues(&materialize(op))?)
}

/// Lowest Ritz value after each of `steps` Lanczos steps, without restarts.
pub fn ritz_history<A: LinearOperator + ?Sized>(op: &A, steps: usize, seed: u64) -> Vec<f64> {
    let n = op.dim();
    let steps = steps.min(n);
    let mut v = random_vector(n, seed);
    let s = norm(&v);
    scale(&mut v, 1.0 / s);
    let mut basis = vec![v];
    let mut t = vec![vec![0.0; steps]; steps];
    let mut w = vec![0.0; n];
    let mut out = Vec::with_capacity(steps);
    for j in 0..steps {
        op.apply(&basis[j], &mut w);
        let h = orthogonalize(&mut w, &basis);
        for (i, &hi) in h.iter().enumerate() {
            t[i][j] = hi;
            t[j][i] = hi;
        }
        let tk: Vec<Vec<f64>> = t[..=j].iter().map(|r| r[..=j].to_vec()).collect();
        out.push(dense::symmetric_eigenvalues(&tk).expect("small tridiagonal")[0]);
        let beta = norm(&w);
        if beta <= 1e-14 {
            break;
        }
        scale(&mut w, 1.0 / beta);
        basis.push(w.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SparseOperator;
    use proptest::prelude::*;
    use rand::Rng;

    fn diag(vals: &[f64]) -> SparseOperator {
        let t: Vec<(usize, usize, f64)> = vals.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        SparseOperator::from_triplets(vals.len(), &t).unwrap()
    }

    pub(crate) fn random_sparse(n: usize, density: f64, seed: u64) -> SparseOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, rng.gen_range(-2.0..2.0)));
            for j in 0..i {
                if rng.gen_bool(density) {
                    let v = rng.gen_range(-1.0..1.0);
                    trip.push((i, j, v));
                    trip.push((j, i, v));
                }
            }
        }
        SparseOperator::from_triplets(n, &trip).unwrap()
    }

    #[test]
    fn diagonal_ground() {
        let r = ground_state(&diag(&[3.0, -1.0, 2.0]), &SolverOptions::default()).unwrap();
        assert!((r.ground() + 1.0).abs() < 1e-12);
        assert!((r.vectors[0][1].abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn two_by_two() {
        let op = SparseOperator::from_dense(&[vec![0.0, 0.2], vec![0.2, 2.0]]).unwrap();
        let r = lowest_two(&op, &SolverOptions::default()).unwrap();
        assert!((r.energies[0] - (1.0 - 1.04f64.sqrt())).abs() < 1e-12);
        assert!((r.gap().unwrap() - 2.0 * 1.04f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gaps_and_degeneracy() {
        let r = lowest_two(&diag(&[0.0, 0.0, 1.0]), &SolverOptions::default()).unwrap();
        assert!(r.gap().unwrap().abs() < 1e-12);
        assert!(r.near_degenerate);
        let r = lowest_two(&diag(&[-1.0, 0.5, 2.0]), &SolverOptions::default()).unwrap();
        assert!((r.gap().unwrap() - 1.5).abs() < 1e-12);
        assert!(!r.near_degenerate);
    }

    #[test]
    fn random_200_matches_dense() {
        let op = random_sparse(200, 0.05, 11);
        let lz = ground_state(&op, &SolverOptions::default()).unwrap();
        let dn = dense_ground(&op).unwrap();
        assert!((lz.ground() - dn.ground()).abs() < 1e-9);
        assert!(lz.residuals[0] <= 1e-10);
        assert!((norm(&lz.vectors[0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn restart_path_converges() {
        let op = random_sparse(400, 0.02, 5);
        let opts = SolverOptions { basis_size: 8, ..SolverOptions::default() };
        let lz = lowest_two(&op, &opts).unwrap();
        let dn = dense_lowest_two(&op).unwrap();
        assert!((lz.energies[0] - dn.energies[0]).abs() < 1e-9);
        assert!((lz.energies[1] - dn.energies[1]).abs() < 1e-9);
    }

    #[test]
    fn second_state_above_zero_with_isolated_ground() {
        // ground well below zero, rest of the spectrum positive: the locked
        // direction must not reappear as a spurious zero Ritz value
        let n = 800;
        let mut trip = vec![(0, 0, -3.0)];
        for i in 1..n {
            trip.push((i, i, 1.0 + 4.0 * i as f64 / n as f64));
            trip.push((i, i - 1, 0.1));
            trip.push((i - 1, i, 0.1));
        }
        let op = SparseOperator::from_triplets(n, &trip).unwrap();
        let opts = SolverOptions { basis_size: 20, ..SolverOptions::default() };
        let lz = lowest_two(&op, &opts).unwrap();
        let exact = dense_lowest_two(&op).unwrap();
        assert!((lz.energies[0] - exact.energies[0]).abs() < 1e-9);
        assert!((lz.energies[1] - exact.energies[1]).abs() < 1e-9);
        assert!(dot(&lz.vectors[0], &lz.vectors[1]).abs() < 1e-8);
    }

    #[test]
    fn non_convergence_reports_best_residual() {
        let op = random_sparse(300, 0.05, 3);
        let opts = SolverOptions { max_iter: 5, basis_size: 4, ..SolverOptions::default() };
        match ground_state(&op, &opts) {
            Err(EigenError::NoConvergence { best_residual, .. }) => assert!(best_residual > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_dimensional_operator() {
        let r = ground_state(&diag(&[4.5]), &SolverOptions::default()).unwrap();
        assert_eq!(r.ground(), 4.5);
        assert!(matches!(lowest_two(&diag(&[1.0]), &SolverOptions::default()), Err(EigenError::TooSmall(1))));
    }

    #[test]
    fn dense_capacity() {
        let op = diag(&vec![1.0; DENSE_LIMIT + 1]);
        assert!(matches!(dense_ground(&op), Err(EigenError::Capacity { .. })));
    }

    #[test]
    fn ritz_values_never_increase() {
        for seed in 0..4 {
            let op = random_sparse(150, 0.05, 100 + seed);
            let h = ritz_history(&op, 60, seed);
            for w in h.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let op = random_sparse(300, 0.03, 9);
        let a = lowest_two(&op, &SolverOptions::default()).unwrap();
        let b = lowest_two(&op, &SolverOptions::default()).unwrap();
        assert_eq!(a.energies[0].to_bits(), b.energies[0].to_bits());
        assert_eq!(a.energies[1].to_bits(), b.energies[1].to_bits());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn lanczos_matches_dense(n in 10usize..120, seed in 0u64..1000) {
            let op = random_sparse(n, 0.1, seed);
            let lz = ground_state(&op, &SolverOptions::default()).unwrap();
            let dn = dense_ground(&op).unwrap();
            prop_assert!((lz.ground() - dn.ground()).abs() < 1e-9);
        }
    }
}
