//! Compressed-row real symmetric operators and the matrix-free
//! [`LinearOperator`] interface consumed by the eigensolvers.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("entry ({row},{col}) = {a} but ({col},{row}) = {b}: operator is not symmetric")]
    NotSymmetric { row: usize, col: usize, a: f64, b: f64 },
    #[error("index ({row},{col}) out of range for dimension {dim}")]
    OutOfRange { row: usize, col: usize, dim: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// A real symmetric operator that can be applied to vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    /// `y = A x`. Implementations must be deterministic.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Diagonal entries, when cheaply available.
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Row-compressed real symmetric matrix. Columns within a row are sorted and
/// no explicit zeros are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// Build from per-row `(col, value)` lists. Duplicate columns are summed;
    /// zeros are dropped.
    pub fn from_rows(dim: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self, SparseError> {
        assert_eq!(rows.len(), dim);
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if c >= dim {
                    return Err(SparseError::OutOfRange { row: r, col: c, dim });
                }
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        let op = SparseOperator { dim, row_ptr, cols, vals }.drop_zeros();
        op.check_symmetric()?;
        Ok(op)
    }

    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, SparseError> {
        let mut rows = vec![Vec::new(); dim];
        for &(r, c, v) in triplets {
            if r >= dim {
                return Err(SparseError::OutOfRange { row: r, col: c, dim });
            }
            rows[r].push((c, v));
        }
        Self::from_rows(dim, rows)
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Result<Self, SparseError> {
        let rows = a
            .iter()
            .map(|row| row.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(c, &v)| (c, v)).collect())
            .collect();
        Self::from_rows(a.len(), rows)
    }

    fn drop_zeros(self) -> Self {
        let mut row_ptr = Vec::with_capacity(self.dim + 1);
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        row_ptr.push(0);
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.vals[k] != 0.0 {
                    cols.push(self.cols[k]);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseOperator { dim: self.dim, row_ptr, cols, vals }
    }

    /// Structural and exact numerical symmetry check.
    pub fn check_symmetric(&self) -> Result<(), SparseError> {
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                let t = self.get(c, r);
                if t != v {
                    return Err(SparseError::NotSymmetric { row: r, col: c, a: v, b: t });
                }
            }
        }
        Ok(())
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&c) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.dim]; self.dim];
        for (r, row) in a.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        a
    }

    /// Coordinate-format dump, one `row col value` line per stored entry,
    /// 0-based indices.
    pub fn write_coo<W: Write>(&self, mut w: W) -> Result<(), SparseError> {
        writeln!(w, "% coo dim={} nnz={} (row col value, 0-based)", self.dim, self.nnz())?;
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                writeln!(w, "{r} {c} {v:.17e}")?;
            }
        }
        Ok(())
    }

    /// `y += A x` for a single row range, fixed column order.
    #[inline]
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            s += self.vals[k] * x[self.cols[k]];
        }
        s
    }
}

impl LinearOperator for SparseOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut()
            .with_min_len(1024)
            .enumerate()
            .for_each(|(r, yr)| *yr = self.row_dot(r, x));
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some((0..self.dim).map(|r| self.get(r, r)).collect())
    }
}

/// Dense symmetric matrix wrapper, used for small operators.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    pub a: Vec<Vec<f64>>,
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (yr, row) in y.iter_mut().zip(&self.a) {
            *yr = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some((0..self.a.len()).map(|i| self.a[i][i]).collect())
    }
}

/// Dense matrix of any [`LinearOperator`] by applying it to unit vectors.
pub fn materialize<A: LinearOperator + ?Sized>(op: &A) -> Vec<Vec<f64>> {
    let n = op.dim();
    let mut e = vec![0.0; n];
    let mut cols = vec![vec![0.0; n]; n];
    for (j, col) in cols.iter_mut().enumerate() {
        e[j] = 1.0;
        op.apply(&e, col);
        e[j] = 0.0;
    }
    // cols[j][i] = A[i][j]; transpose
    let mut a = vec![vec![0.0; n]; n];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            a[i][j] = v;
        }
    }
    a
}
