//! Ensemble Kalman filter with perturbed observations.
//!
//! The covariance is represented by `A = (X - x̄ 1ᵀ) / √(N-1)`; the gain is
//! formed from `A (HA)ᵀ` and `HA (HA)ᵀ + σ² I` so `A Aᵀ` is never built.
//! Model noise `w ~ N(0, Q)` is drawn through a dense Cholesky factor of `Q`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{innovation_covariance, AssimilationFilter, CovarianceView};
use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::kernel::{dense_gram, KernelSpec};
use crate::numerics::SpdFactor;
use crate::obs::ObservationOperator;
use crate::rng::{self, Purpose};

/// Members are the columns of an `m x N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EnkfState {
    pub ensemble: DMatrix<f64>,
}

impl EnkfState {
    pub fn members(&self) -> usize {
        self.ensemble.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleStatistics {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    /// `(X - x̄ 1ᵀ) / √(N-1)`.
    pub anomalies: DMatrix<f64>,
}

/// Draws `N(0, Q)` columns.
#[derive(Debug, Clone)]
pub enum ModelNoiseSampler {
    Zero { dim: usize },
    Cholesky { lower: DMatrix<f64> },
}

impl ModelNoiseSampler {
    /// Factors `Q + 1e-10 θ I`, `θ` being the kernel variance.
    pub fn from_kernel(kernel: &KernelSpec, points: &[Point2]) -> Result<Self> {
        let theta = kernel.diagonal();
        if theta == 0.0 {
            return Ok(ModelNoiseSampler::Zero { dim: points.len() });
        }
        let mut q = dense_gram(kernel, points);
        for i in 0..q.nrows() {
            q[(i, i)] += 1e-10 * theta;
        }
        Self::from_covariance(&q)
    }

    pub fn from_covariance(q: &DMatrix<f64>) -> Result<Self> {
        if q.iter().all(|&v| v == 0.0) {
            return Ok(ModelNoiseSampler::Zero { dim: q.nrows() });
        }
        let f = SpdFactor::new(q, "model noise covariance")?;
        Ok(ModelNoiseSampler::Cholesky { lower: f.lower() })
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelNoiseSampler::Zero { dim } => *dim,
            ModelNoiseSampler::Cholesky { lower } => lower.nrows(),
        }
    }

    /// `L Ξ` for step `t`; member `j` uses its own stream.
    pub fn sample(&self, seed: u64, t: u64, members: usize) -> DMatrix<f64> {
        let m = self.dim();
        match self {
            ModelNoiseSampler::Zero { .. } => DMatrix::zeros(m, members),
            ModelNoiseSampler::Cholesky { lower } => {
                let xi = standard_normal_columns(m, members, |j| rng::stream(seed, Purpose::ModelNoise, t, j as u64));
                lower * xi
            }
        }
    }
}

fn standard_normal_columns(
    rows: usize,
    cols: usize,
    mut stream_for: impl FnMut(usize) -> rand_chacha::ChaCha20Rng,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols);
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mut r = stream_for(j);
        rng::fill_standard_normal(&mut r, col.as_mut_slice());
    }
    out
}

/// Members `μ₀ + √α ξ_j`.
pub fn enkf_init(mean: &DVector<f64>, alpha: f64, members: usize, seed: u64) -> Result<EnkfState> {
    if members < 2 {
        return Err(Error::Input(format!("ensemble needs at least 2 members, got {members}")));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Input(format!("alpha must be >= 0, got {alpha}")));
    }
    let m = mean.len();
    let mut ensemble = standard_normal_columns(m, members, |j| rng::stream(seed, Purpose::EnsembleInit, j as u64, 0));
    ensemble *= alpha.sqrt();
    for mut col in ensemble.column_iter_mut() {
        col += mean;
    }
    Ok(EnkfState { ensemble })
}

pub fn enkf_statistics(state: &EnkfState) -> EnsembleStatistics {
    let (m, n) = state.ensemble.shape();
    let mean = state.ensemble.column_mean();
    let mut anomalies = state.ensemble.clone();
    let scale = 1.0 / ((n - 1) as f64).sqrt();
    for mut col in anomalies.column_iter_mut() {
        col -= &mean;
        col *= scale;
    }
    let variance = DVector::from_iterator(m, anomalies.row_iter().map(|r| r.norm_squared()));
    EnsembleStatistics {
        mean,
        variance,
        anomalies,
    }
}

/// Forecast with sampled model noise, then the perturbed-observation update.
/// `t` (1-based) selects the random streams of this step.
pub fn enkf_step<H: ObservationOperator + ?Sized>(
    state: &mut EnkfState,
    sampler: &ModelNoiseSampler,
    h: &H,
    r_variance: f64,
    z: &DVector<f64>,
    seed: u64,
    t: u64,
) -> Result<()> {
    enkf_forecast(state, sampler, seed, t)?;
    enkf_analysis(state, h, r_variance, z, seed, t)
}

fn enkf_forecast(state: &mut EnkfState, sampler: &ModelNoiseSampler, seed: u64, t: u64) -> Result<()> {
    if sampler.dim() != state.ensemble.nrows() {
        return Err(Error::dim("enkf model noise", state.ensemble.nrows(), sampler.dim()));
    }
    if let ModelNoiseSampler::Cholesky { .. } = sampler {
        state.ensemble += sampler.sample(seed, t, state.members());
    }
    Ok(())
}

fn enkf_analysis<H: ObservationOperator + ?Sized>(
    state: &mut EnkfState,
    h: &H,
    r_variance: f64,
    z: &DVector<f64>,
    seed: u64,
    t: u64,
) -> Result<()> {
    h.check_state(state.ensemble.nrows(), "enkf state")?;
    h.check_obs(z.len(), "enkf observation")?;
    let n = h.nrows();
    if n == 0 {
        return Ok(());
    }
    let members = state.members();
    let stats = enkf_statistics(state);
    let ha = h.mul_dense(&stats.anomalies);
    let s = innovation_covariance(&(&ha * ha.transpose()), r_variance);
    let s_inv = SpdFactor::new(&s, "enkf innovation covariance")?.inverse();

    let sd = r_variance.sqrt();
    let mut d = standard_normal_columns(n, members, |j| rng::stream(seed, Purpose::ObservationPerturbation, t, j as u64));
    d *= sd;
    d -= h.mul_dense(&state.ensemble);
    for mut col in d.column_iter_mut() {
        col += z;
    }
    // X += A (HA)ᵀ S⁻¹ D
    let weights = ha.transpose() * (s_inv * d);
    state.ensemble.gemm(1.0, &stats.anomalies, &weights, 1.0);
    Ok(())
}

pub struct EnsembleKalmanFilter<H> {
    pub state: EnkfState,
    sampler: Arc<ModelNoiseSampler>,
    h: Arc<H>,
    r_variance: f64,
    seed: u64,
    step: u64,
}

impl<H: ObservationOperator> EnsembleKalmanFilter<H> {
    pub fn new(state: EnkfState, sampler: Arc<ModelNoiseSampler>, h: Arc<H>, r_variance: f64, seed: u64) -> Result<Self> {
        h.check_state(state.ensemble.nrows(), "enkf state")?;
        if sampler.dim() != state.ensemble.nrows() {
            return Err(Error::dim("enkf model noise", state.ensemble.nrows(), sampler.dim()));
        }
        Ok(EnsembleKalmanFilter {
            state,
            sampler,
            h,
            r_variance,
            seed,
            step: 0,
        })
    }
}

impl<H: ObservationOperator> AssimilationFilter for EnsembleKalmanFilter<H> {
    fn label(&self) -> String {
        format!("enkf_{}", self.state.members())
    }

    fn predict(&mut self) -> Result<()> {
        self.step += 1;
        enkf_forecast(&mut self.state, &self.sampler, self.seed, self.step)
    }

    fn update(&mut self, z: &DVector<f64>) -> Result<()> {
        enkf_analysis(&mut self.state, self.h.as_ref(), self.r_variance, z, self.seed, self.step)
    }

    fn mean(&self) -> DVector<f64> {
        self.state.ensemble.column_mean()
    }

    fn variance(&self) -> DVector<f64> {
        enkf_statistics(&self.state).variance
    }

    fn covariance(&self) -> CovarianceView<'_> {
        CovarianceView::Ensemble(enkf_statistics(&self.state).anomalies)
    }

    fn storage_bytes(&self) -> usize {
        8 * self.state.ensemble.len()
    }
}
