//! Small dense linear algebra: SPD solves and symmetric eigendecomposition.
//!
//! Thin wrappers around nalgebra's Cholesky and symmetric QR eigensolver that
//! turn silent failures into errors and fix the eigenvalue ordering.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive-definite matrix.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>, context: &str) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dim("spd factor (square)", a.nrows(), a.ncols()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("{context}: non-finite matrix entry")));
        }
        Cholesky::new(a.clone())
            .map(|chol| SpdFactor { chol })
            .ok_or_else(|| Error::NotPositiveDefinite {
                context: context.to_string(),
            })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.dim() {
            return Err(Error::dim("spd solve rhs rows", self.dim(), b.nrows()));
        }
        Ok(self.chol.solve(b))
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.dim() {
            return Err(Error::dim("spd solve rhs length", self.dim(), b.len()));
        }
        Ok(self.chol.solve(b))
    }

    /// Lower-triangular factor `L` with `A = L Lᵀ`.
    /// `A⁻¹`, exactly symmetric. Lets callers apply the inverse with a
    /// matrix product, which is much faster than a solve when the right-hand
    /// side is wide.
    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = self.chol.inverse();
        let n = inv.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Relative asymmetry `max |a_ij - a_ji| / max |a_ij|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let scale = a.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Solves `A X = B` for symmetric positive-definite `A`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::dim("spd_solve (square)", a.nrows(), a.ncols()));
    }
    let asym = asymmetry(a);
    if asym > 1e-10 {
        return Err(Error::Input(format!(
            "spd_solve: matrix is not symmetric (relative asymmetry {asym:.3e})"
        )));
    }
    SpdFactor::new(a, "spd_solve")?.solve(b)
}

/// Eigenvalues sorted descending with matching orthonormal eigenvectors (as columns).
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eig(a: &DMatrix<f64>) -> Result<SymEigen> {
    if !a.is_square() {
        return Err(Error::dim("sym_eig (square)", a.nrows(), a.ncols()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(SymEigen {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigen { values, vectors })
}

/// Eigenvalues only, descending. Cheaper than [`sym_eig`].
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_and_scaled_identity() {
        let b = random(4, 3, 1);
        let x = spd_solve(&DMatrix::identity(4, 4), &b).unwrap();
        assert_eq!(x, b);
        let x = spd_solve(&(DMatrix::identity(4, 4) * 2.0), &b).unwrap();
        assert!((x - &b / 2.0).amax() < 1e-15);
    }

    #[test]
    fn random_spd_residual() {
        let g = random(50, 50, 2);
        let a = &g * g.transpose() + DMatrix::identity(50, 50) * 0.5;
        let b = random(50, 7, 3);
        let x = spd_solve(&a, &b).unwrap();
        let resid = (&a * &x - &b).norm() / b.norm();
        assert!(resid <= 1e-10, "residual {resid}");
    }

    #[test]
    fn non_pd_is_an_error() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            spd_solve(&a, &DMatrix::identity(2, 2)),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(spd_solve(&a, &DMatrix::identity(2, 2)), Err(Error::Input(_))));
    }

    #[test]
    fn eig_diagonal_and_identity() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let e = sym_eig(&a).unwrap();
        assert_eq!(e.values.as_slice(), &[3.0, 2.0, 1.0]);
        let e = sym_eig(&DMatrix::identity(5, 5)).unwrap();
        assert!(e.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn eig_reconstruction_and_orthonormality() {
        let g = random(30, 30, 4);
        let a = &g + g.transpose();
        let e = sym_eig(&a).unwrap();
        let lam = DMatrix::from_diagonal(&e.values);
        let resid = (&a * &e.vectors - &e.vectors * lam).norm() / a.norm();
        assert!(resid <= 1e-8, "residual {resid}");
        let ortho = (e.vectors.transpose() * &e.vectors - DMatrix::identity(30, 30)).norm();
        assert!(ortho <= 1e-8);
        assert!(e.values.as_slice().windows(2).all(|w| w[0] >= w[1]));
        let vals = sym_eigenvalues(&a);
        for (x, y) in vals.iter().zip(e.values.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
