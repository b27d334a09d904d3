//! Dense Kalman filter, `O(n m²)` per step.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{innovation_covariance, symmetrize, AssimilationFilter, CovarianceView};
use crate::error::{Error, Result};
use crate::numerics::SpdFactor;
use crate::obs::ObservationOperator;

#[derive(Debug, Clone, PartialEq)]
pub struct KfState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl KfState {
    /// `x̂ = μ₀`, `P = α I`.
    pub fn initial(mean: DVector<f64>, alpha: f64) -> Self {
        let m = mean.len();
        KfState {
            mean,
            cov: DMatrix::identity(m, m) * alpha,
        }
    }
}

/// `P ← P + Q`; the mean is unchanged under the random walk.
pub fn kf_predict(state: &mut KfState, q: &DMatrix<f64>) -> Result<()> {
    let m = state.mean.len();
    if q.nrows() != m || q.ncols() != m {
        return Err(Error::dim("kf_predict Q", m, q.nrows()));
    }
    state.cov += q;
    Ok(())
}

/// Gain `K = P Hᵀ (H P Hᵀ + R)⁻¹`, then `x̂ ← x̂ + K (z - H x̂)` and
/// `P ← P - K H P`, followed by re-symmetrization.
pub fn kf_update<H: ObservationOperator + ?Sized>(
    state: &mut KfState,
    h: &H,
    r_variance: f64,
    z: &DVector<f64>,
) -> Result<()> {
    h.check_state(state.mean.len(), "kf_update state")?;
    h.check_obs(z.len(), "kf_update observation")?;
    if h.nrows() == 0 {
        return Ok(());
    }
    let c = h.dense_mul_transpose(&state.cov);
    let s = innovation_covariance(&h.mul_dense(&c), r_variance);
    let s_inv = SpdFactor::new(&s, "kf_update innovation covariance")?.inverse();
    let innovation = z - h.apply(&state.mean);
    let gain = &c * s_inv;
    state.mean += &gain * innovation;
    // H P = (P Hᵀ)ᵀ since P is kept symmetric
    state.cov.gemm(-1.0, &gain, &c.transpose(), 1.0);
    symmetrize(&mut state.cov);
    Ok(())
}

pub struct DenseKalmanFilter<H> {
    pub state: KfState,
    q: DMatrix<f64>,
    h: Arc<H>,
    r_variance: f64,
}

impl<H: ObservationOperator> DenseKalmanFilter<H> {
    pub fn new(state: KfState, q: DMatrix<f64>, h: Arc<H>, r_variance: f64) -> Result<Self> {
        h.check_state(state.mean.len(), "dense KF state")?;
        if q.nrows() != state.mean.len() || !q.is_square() {
            return Err(Error::dim("dense KF Q", state.mean.len(), q.nrows()));
        }
        Ok(DenseKalmanFilter {
            state,
            q,
            h,
            r_variance,
        })
    }
}

impl<H: ObservationOperator> AssimilationFilter for DenseKalmanFilter<H> {
    fn label(&self) -> String {
        "kf".into()
    }

    fn predict(&mut self) -> Result<()> {
        kf_predict(&mut self.state, &self.q)
    }

    fn update(&mut self, z: &DVector<f64>) -> Result<()> {
        kf_update(&mut self.state, self.h.as_ref(), self.r_variance, z)
    }

    fn mean(&self) -> DVector<f64> {
        self.state.mean.clone()
    }

    fn variance(&self) -> DVector<f64> {
        self.state.cov.diagonal()
    }

    fn covariance(&self) -> CovarianceView<'_> {
        CovarianceView::Dense(&self.state.cov)
    }

    fn storage_bytes(&self) -> usize {
        8 * self.state.cov.len()
    }
}
