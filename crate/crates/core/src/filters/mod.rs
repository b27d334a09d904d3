//! Assimilation engines for the random-walk model.
//!
//! All three share the predict-then-update cycle through [`AssimilationFilter`].
//! The step functions on the state types (`kf_update`, `hikf_update`, ...)
//! are also public so they can be driven and tested on their own.

pub mod enkf;
pub mod hikf;
pub mod kf;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

pub use enkf::{enkf_init, enkf_statistics, enkf_step, EnkfState, EnsembleKalmanFilter, EnsembleStatistics, ModelNoiseSampler};
pub use hikf::{hikf_precompute, hikf_precompute_dense, hikf_predict, hikf_update, Hikf, HikfPrecompute, HikfState};
pub use kf::{kf_predict, kf_update, DenseKalmanFilter, KfState};

/// What a filter exposes about its posterior covariance.
pub enum CovarianceView<'a> {
    /// Full `m x m` covariance.
    Dense(&'a DMatrix<f64>),
    /// `Σ = A Aᵀ` with the `m x N` anomaly matrix `A`.
    Ensemble(DMatrix<f64>),
    /// Only the diagonal is tracked.
    Unavailable,
}

pub trait AssimilationFilter {
    fn label(&self) -> String;

    /// Random-walk forecast of the mean and covariance surrogate.
    fn predict(&mut self) -> Result<()>;

    /// Conditions on one observation vector.
    fn update(&mut self, z: &DVector<f64>) -> Result<()>;

    fn step(&mut self, z: &DVector<f64>) -> Result<()> {
        self.predict()?;
        self.update(z)
    }

    fn mean(&self) -> DVector<f64>;

    /// Per-cell posterior variance.
    fn variance(&self) -> DVector<f64>;

    fn covariance(&self) -> CovarianceView<'_>;

    /// Bytes held by the dominant payload arrays.
    fn storage_bytes(&self) -> usize;
}

/// Replaces `a` by `(a + aᵀ) / 2` in place.
pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `S = A + σ² I`, symmetrized.
pub(crate) fn innovation_covariance(a: &DMatrix<f64>, r_variance: f64) -> DMatrix<f64> {
    let mut s = a.clone();
    symmetrize(&mut s);
    for i in 0..s.nrows() {
        s[(i, i)] += r_variance;
    }
    s
}
