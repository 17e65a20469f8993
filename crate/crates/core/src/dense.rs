//! Dense real symmetric eigensolver: Householder reduction to tridiagonal
//! form followed by implicit-shift QL iteration.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenseError {
    #[error("QL iteration did not converge for eigenvalue {index}")]
    NoConvergence { index: usize },
    #[error("matrix is not square")]
    NotSquare,
}

const MAX_QL_ITER: usize = 60;

/// Eigenvalues ascending and eigenvectors as columns: `vecs[k][i]` is
/// component `k` of eigenvector `i`.
pub fn symmetric_eigen(a: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>), DenseError> {
    let n = a.len();
    if a.iter().any(|r| r.len() != n) {
        return Err(DenseError::NotSquare);
    }
    let mut z: Vec<Vec<f64>> = a.to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut z, &mut d, &mut e, true);
    tridiagonal_ql(&mut d, &mut e, Some(&mut z))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let vals = order.iter().map(|&i| d[i]).collect();
    let vecs = z.iter().map(|row| order.iter().map(|&i| row[i]).collect()).collect();
    Ok((vals, vecs))
}

/// Eigenvalues only, ascending.
pub fn symmetric_eigenvalues(a: &[Vec<f64>]) -> Result<Vec<f64>, DenseError> {
    let n = a.len();
    if a.iter().any(|r| r.len() != n) {
        return Err(DenseError::NotSquare);
    }
    let mut z: Vec<Vec<f64>> = a.to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut z, &mut d, &mut e, false);
    tridiagonal_ql(&mut d, &mut e, None)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Householder reduction. On return `d` holds the diagonal, `e[1..]` the
/// subdiagonal, and (if `vectors`) `a` the accumulated orthogonal transform.
fn tridiagonalize(a: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64], vectors: bool) {
    let n = a.len();
    if n == 0 {
        return;
    }
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = a[i][..=l].iter().map(|v| v.abs()).sum();
            if scale == 0.0 {
                e[i] = a[i][l];
            } else {
                for k in 0..=l {
                    a[i][k] /= scale;
                    h += a[i][k] * a[i][k];
                }
                let f = a[i][l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[i][l] = f - g;
                let mut f = 0.0;
                for j in 0..=l {
                    if vectors {
                        a[j][i] = a[i][j] / h;
                    }
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[j][k] * a[i][k];
                    }
                    for k in j + 1..=l {
                        g += a[k][j] * a[i][k];
                    }
                    e[j] = g / h;
                    f += e[j] * a[i][j];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[i][j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[j][k] -= f * e[k] + g * a[i][k];
                    }
                }
            }
        } else {
            e[i] = a[i][l];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if vectors {
            if d[i] != 0.0 {
                for j in 0..i {
                    let mut g = 0.0;
                    for k in 0..i {
                        g += a[i][k] * a[k][j];
                    }
                    for k in 0..i {
                        a[k][j] -= g * a[k][i];
                    }
                }
            }
            d[i] = a[i][i];
            a[i][i] = 1.0;
            for j in 0..i {
                a[j][i] = 0.0;
                a[i][j] = 0.0;
            }
        } else {
            d[i] = a[i][i];
        }
    }
}

/// Implicit QL with Wilkinson-type shifts on a symmetric tridiagonal matrix.
/// `e[1..]` holds the subdiagonal on entry.
pub fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], mut z: Option<&mut [Vec<f64>]>) -> Result<(), DenseError> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            if iter == MAX_QL_ITER {
                return Err(DenseError::NoConvergence { index: l });
            }
            iter += 1;
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if let Some(z) = z.as_deref_mut() {
                    for row in z.iter_mut() {
                        let f = row[i + 1];
                        row[i + 1] = s * row[i] + c * f;
                        row[i] = c * row[i] - s * f;
                    }
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.gen_range(-1.0..1.0);
                a[i][j] = v;
                a[j][i] = v;
            }
        }
        a
    }

    #[test]
    fn two_by_two_closed_form() {
        let (vals, vecs) = symmetric_eigen(&[vec![0.0, 0.2], vec![0.2, 2.0]]).unwrap();
        assert!((vals[0] - (1.0 - 1.04f64.sqrt())).abs() < 1e-15);
        assert!((vals[1] - (1.0 + 1.04f64.sqrt())).abs() < 1e-15);
        let r = vecs[0][0] * 0.2 + vecs[1][0] * 2.0 - vals[0] * vecs[1][0];
        assert!(r.abs() < 1e-15);
    }

    #[test]
    fn diagonal_and_trivial_sizes() {
        assert_eq!(symmetric_eigenvalues(&[]).unwrap(), Vec::<f64>::new());
        assert_eq!(symmetric_eigenvalues(&[vec![4.0]]).unwrap(), vec![4.0]);
        let v = symmetric_eigenvalues(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, 2.0],
        ])
        .unwrap();
        assert_eq!(v, vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn decomposition_reconstructs_matrix() {
        let n = 40;
        let a = random_symmetric(n, 7);
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| vecs[i][k] * vals[k] * vecs[j][k]).sum();
                assert!((r - a[i][j]).abs() < 1e-12, "({i},{j})");
                let o: f64 = (0..n).map(|k| vecs[k][i] * vecs[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((o - want).abs() < 1e-12);
            }
        }
        let only = symmetric_eigenvalues(&a).unwrap();
        for (x, y) in only.iter().zip(&vals) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn agrees_with_nalgebra() {
        for seed in 0..5 {
            let n = 30 + 7 * seed as usize;
            let a = random_symmetric(n, seed);
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
            let mut reference: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
            reference.sort_by(f64::total_cmp);
            let ours = symmetric_eigenvalues(&a).unwrap();
            for (x, y) in ours.iter().zip(&reference) {
                assert!((x - y).abs() < 1e-11);
            }
        }
    }
}
