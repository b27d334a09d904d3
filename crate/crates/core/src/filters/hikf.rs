//! HiKF: the Kalman filter carried by the cross-covariance `C = P Hᵀ`.
//!
//! Under the random walk with stationary `H`, the prediction only adds the
//! fixed `C_Q = Q Hᵀ`, so `Q` enters once, in a precomputation that the FMM
//! performs in `O(n m)`. Each step then costs `O(n² m)`. The per-cell
//! variance is tracked alongside: the prior adds `diag(Q)` and the update
//! subtracts `Σ_j K_ij C_ij`.
//!
//! The `n x n` product `H C` is updated in step with `C`, so `H` is never
//! re-applied to `C`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{innovation_covariance, symmetrize, AssimilationFilter, CovarianceView};
use crate::error::{Error, Result};
use crate::fmm::FmmTree;
use crate::numerics::SpdFactor;
use crate::obs::ObservationOperator;

/// Quantities derived from `Q` once per monitoring configuration.
#[derive(Debug, Clone)]
pub struct HikfPrecompute {
    /// `Q Hᵀ`, `m x n`.
    pub c_q: DMatrix<f64>,
    /// `H Q Hᵀ`, `n x n`.
    pub hc_q: DMatrix<f64>,
    /// `diag(Q)`.
    pub diag_q: DVector<f64>,
}

impl HikfPrecompute {
    fn from_cq<H: ObservationOperator + ?Sized>(h: &H, c_q: DMatrix<f64>, q_diag: f64) -> Self {
        let mut hc_q = h.mul_dense(&c_q);
        symmetrize(&mut hc_q);
        let m = c_q.nrows();
        HikfPrecompute {
            c_q,
            hc_q,
            diag_q: DVector::from_element(m, q_diag),
        }
    }
}

/// `C_Q = Q Hᵀ` through the FMM, one column of `Hᵀ` at a time.
pub fn hikf_precompute<H: ObservationOperator + ?Sized>(h: &H, fmm: &FmmTree) -> Result<HikfPrecompute> {
    h.check_state(fmm.len(), "hikf_precompute tree size")?;
    let c_q = fmm.matmat(&h.transpose_dense())?;
    Ok(HikfPrecompute::from_cq(h, c_q, fmm.kernel().diagonal()))
}

/// `C_Q = Q Hᵀ` from a dense `Q`. Reference path for small problems.
pub fn hikf_precompute_dense<H: ObservationOperator + ?Sized>(h: &H, q: &DMatrix<f64>) -> Result<HikfPrecompute> {
    h.check_state(q.nrows(), "hikf_precompute_dense Q")?;
    let c_q = h.dense_mul_transpose(q);
    let m = q.nrows();
    let mut pre = HikfPrecompute::from_cq(h, c_q, 0.0);
    pre.diag_q = DVector::from_iterator(m, (0..m).map(|i| q[(i, i)]));
    Ok(pre)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HikfState {
    pub mean: DVector<f64>,
    /// `C = P Hᵀ`, `m x n`.
    pub cross_cov: DMatrix<f64>,
    /// `diag(P)`.
    pub variance: DVector<f64>,
    /// `H C`, `n x n`.
    pub hc: DMatrix<f64>,
}

impl HikfState {
    /// State for `P₀ = α I`: `C = α Hᵀ`, `δ² = α`, `H C = α H Hᵀ`.
    pub fn initial<H: ObservationOperator + ?Sized>(h: &H, mean: DVector<f64>, alpha: f64) -> Result<Self> {
        h.check_state(mean.len(), "hikf initial mean")?;
        let m = mean.len();
        let ht = h.transpose_dense();
        let mut hc = h.mul_dense(&ht) * alpha;
        symmetrize(&mut hc);
        Ok(HikfState {
            mean,
            cross_cov: ht * alpha,
            variance: DVector::from_element(m, alpha),
            hc,
        })
    }
}

/// `C ← C + C_Q`, `δ² ← δ² + diag(Q)`, `H C ← H C + H C_Q`.
pub fn hikf_predict(state: &mut HikfState, pre: &HikfPrecompute) -> Result<()> {
    if pre.c_q.shape() != state.cross_cov.shape() {
        return Err(Error::dim("hikf_predict C_Q rows", state.cross_cov.nrows(), pre.c_q.nrows()));
    }
    state.cross_cov += &pre.c_q;
    state.variance += &pre.diag_q;
    state.hc += &pre.hc_q;
    Ok(())
}

/// One measurement update on the cross-covariance representation:
/// `K = C S⁻¹` with `S = H C + σ² I`, `x̂ ← x̂ + K (z - H x̂)`,
/// `δ²_i ← δ²_i - Σ_j K_ij C_ij`, and `C ← C - K H C`, `H C ← H C - H C S⁻¹ H C`.
/// The last two are evaluated as `σ² K` and `σ² H C S⁻¹`, which are equal
/// and avoid cancelling a large prior against a large correction.
pub fn hikf_update<H: ObservationOperator + ?Sized>(
    state: &mut HikfState,
    h: &H,
    r_variance: f64,
    z: &DVector<f64>,
) -> Result<()> {
    h.check_state(state.mean.len(), "hikf_update state")?;
    h.check_obs(z.len(), "hikf_update observation")?;
    if h.nrows() == 0 {
        return Ok(());
    }
    let s = innovation_covariance(&state.hc, r_variance);
    let s_inv = SpdFactor::new(&s, "hikf_update innovation covariance")?.inverse();
    let innovation = z - h.apply(&state.mean);
    let gain = &state.cross_cov * &s_inv;

    state.mean += &gain * innovation;
    // δ²_i -= Σ_j K_ij C_ij, walked column by column to follow the storage order
    for (k_col, c_col) in gain.column_iter().zip(state.cross_cov.column_iter()) {
        for ((v, k), c) in state.variance.iter_mut().zip(k_col.iter()).zip(c_col.iter()) {
            *v -= k * c;
        }
    }
    let floor = -1e-10 * state.variance.amax();
    if let Some(i) = state.variance.iter().position(|&v| v < floor) {
        return Err(Error::Numerical(format!(
            "posterior variance of cell {i} is {:.3e}, below {floor:.3e}",
            state.variance[i]
        )));
    }
    // with R = σ² I, P⁺ Hᵀ = K R: no cancellation between prior and correction
    state.cross_cov = gain * r_variance;
    state.hc = &state.hc * &s_inv * r_variance;
    symmetrize(&mut state.hc);
    Ok(())
}

pub struct Hikf<H> {
    pub state: HikfState,
    pre: Arc<HikfPrecompute>,
    h: Arc<H>,
    r_variance: f64,
}

impl<H: ObservationOperator> Hikf<H> {
    pub fn new(state: HikfState, pre: Arc<HikfPrecompute>, h: Arc<H>, r_variance: f64) -> Result<Self> {
        h.check_state(state.mean.len(), "hikf state")?;
        if pre.c_q.shape() != state.cross_cov.shape() {
            return Err(Error::dim("hikf C_Q rows", state.cross_cov.nrows(), pre.c_q.nrows()));
        }
        Ok(Hikf {
            state,
            pre,
            h,
            r_variance,
        })
    }
}

impl<H: ObservationOperator> AssimilationFilter for Hikf<H> {
    fn label(&self) -> String {
        "hikf".into()
    }

    fn predict(&mut self) -> Result<()> {
        hikf_predict(&mut self.state, &self.pre)
    }

    fn update(&mut self, z: &DVector<f64>) -> Result<()> {
        hikf_update(&mut self.state, self.h.as_ref(), self.r_variance, z)
    }

    fn mean(&self) -> DVector<f64> {
        self.state.mean.clone()
    }

    fn variance(&self) -> DVector<f64> {
        self.state.variance.clone()
    }

    fn covariance(&self) -> CovarianceView<'_> {
        CovarianceView::Unavailable
    }

    fn storage_bytes(&self) -> usize {
        8 * (self.state.cross_cov.len() + self.pre.c_q.len() + self.state.variance.len() + self.pre.diag_q.len())
    }
}
