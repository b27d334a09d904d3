//! Linear observation operators.
//!
//! The filters only touch `H` through [`ObservationOperator`], so they run
//! unchanged on the sparse ray operator and on small dense test matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait ObservationOperator {
    /// Number of observations `n`.
    fn nrows(&self) -> usize;
    /// State dimension `m`.
    fn ncols(&self) -> usize;
    /// `H x`.
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `H B` for `B` with `m` rows.
    fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64>;
    /// `A Hᵀ` for `A` with `m` columns.
    fn dense_mul_transpose(&self, a: &DMatrix<f64>) -> DMatrix<f64>;
    /// `Hᵀ` as a dense `m x n` matrix.
    fn transpose_dense(&self) -> DMatrix<f64>;

    fn check_state(&self, len: usize, context: &'static str) -> Result<()> {
        if len != self.ncols() {
            return Err(Error::dim(context, self.ncols(), len));
        }
        Ok(())
    }

    fn check_obs(&self, len: usize, context: &'static str) -> Result<()> {
        if len != self.nrows() {
            return Err(Error::dim(context, self.nrows(), len));
        }
        Ok(())
    }
}

impl ObservationOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }

    fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self * b
    }

    fn dense_mul_transpose(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a * self.transpose()
    }

    fn transpose_dense(&self) -> DMatrix<f64> {
        self.transpose()
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists. Columns within a row are
    /// sorted and duplicates summed.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows.into_iter() {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if c >= ncols {
                    return Err(Error::Input(format!("column {c} out of range for {ncols} columns")));
                }
                if last == Some(c) {
                    *values.last_mut().expect("previous entry") += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseMatrix {
            nrows: row_ptr.len() - 1,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let rows = (0..a.nrows())
            .map(|i| {
                (0..a.ncols())
                    .filter(|&j| a[(i, j)] != 0.0)
                    .map(|j| (j, a[(i, j)]))
                    .collect()
            })
            .collect();
        Self::from_rows(a.ncols(), rows).expect("columns in range")
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    pub fn apply_slice(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }
}

impl ObservationOperator for SparseMatrix {
    fn nrows(&self) -> usize {
        self.nrows
    }

    fn ncols(&self) -> usize {
        self.ncols
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.apply_slice(x.as_slice()))
    }

    fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let k = b.ncols();
        let mut out = DMatrix::zeros(self.nrows, k);
        for c in 0..k {
            let col = b.column(c);
            for i in 0..self.nrows {
                out[(i, c)] = self.row(i).map(|(j, v)| v * col[j]).sum();
            }
        }
        out
    }

    fn dense_mul_transpose(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        // column i of A Hᵀ is sum_j H_ij A[:, j]
        let mut out = DMatrix::zeros(a.nrows(), self.nrows);
        for i in 0..self.nrows {
            let mut dst = out.column_mut(i);
            for (j, v) in self.row(i) {
                dst.axpy(v, &a.column(j), 1.0);
            }
        }
        out
    }

    fn transpose_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                out[(j, i)] = v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| {
            if rng.random::<f64>() < 0.2 {
                rng.random_range(0.0..2.0)
            } else {
                0.0
            }
        })
    }

    #[test]
    fn sparse_products_match_dense() {
        let d = random_sparse(7, 20, 1);
        let s = SparseMatrix::from_dense(&d);
        assert_eq!(s.to_dense(), d);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(5, 20, |_, _| rng.random_range(-1.0..1.0));
        assert!((s.apply(&x) - &d * &x).amax() < 1e-14);
        assert!((s.mul_dense(&b) - &d * &b).amax() < 1e-14);
        assert!((s.dense_mul_transpose(&a) - &a * d.transpose()).amax() < 1e-14);
        assert_eq!(s.transpose_dense(), d.transpose());
    }

    #[test]
    fn duplicates_are_summed() {
        let s = SparseMatrix::from_rows(3, vec![vec![(2, 1.0), (0, 0.5), (2, 0.25)]]).unwrap();
        assert_eq!(s.nnz(), 2);
        assert_eq!(s.row(0).collect::<Vec<_>>(), vec![(0, 0.5), (2, 1.25)]);
        assert!(SparseMatrix::from_rows(3, vec![vec![(3, 1.0)]]).is_err());
    }
}
