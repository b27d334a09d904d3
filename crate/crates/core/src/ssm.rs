//! The random-walk linear-Gaussian state-space model
//! `x_t = x_{t-1} + w_t`, `z_t = H x_t + v_t`, with `w_t ~ N(0, Q)`,
//! `v_t ~ N(0, σ² I)` and `x_0 ~ N(μ₀, α I)`.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::obs::ObservationOperator;
use crate::rng::{self, Purpose};
use crate::tomography::PlumeScenario;

#[derive(Debug, Clone)]
pub struct StateSpaceModel<H> {
    pub h: Arc<H>,
    /// Observation noise variance `σ²` (`R = σ² I`).
    pub r_variance: f64,
    pub q_kernel: KernelSpec,
    pub initial_mean: DVector<f64>,
    /// `P₀ = α I`; zero means a perfectly known initial state.
    pub alpha: f64,
}

impl<H: ObservationOperator> StateSpaceModel<H> {
    pub fn new(
        h: Arc<H>,
        r_variance: f64,
        q_kernel: KernelSpec,
        initial_mean: DVector<f64>,
        alpha: f64,
    ) -> Result<Self> {
        if initial_mean.len() != h.ncols() {
            return Err(Error::dim("initial mean", h.ncols(), initial_mean.len()));
        }
        if !(r_variance.is_finite() && r_variance > 0.0) {
            return Err(Error::Input(format!("observation variance must be > 0, got {r_variance}")));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Input(format!("alpha must be >= 0, got {alpha}")));
        }
        q_kernel.validate()?;
        Ok(StateSpaceModel {
            h,
            r_variance,
            q_kernel,
            initial_mean,
            alpha,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// Target `10 log10(‖Δy‖² / ‖σ‖²)` over the whole record, in dB.
    SnrDb(f64),
    Variance(f64),
}

/// Noise variance per component giving the target SNR, where `signal_sq_norm`
/// is `‖Δy‖²` summed over `components` entries and `‖σ‖² = components * σ²`.
pub fn snr_noise_variance(signal_sq_norm: f64, components: usize, snr_db: f64) -> f64 {
    signal_sq_norm * 10f64.powf(-snr_db / 10.0) / components as f64
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// `x_t` for `t = 1..=T` (index 0 holds step 1).
    pub truth: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
    pub noise_variance: f64,
    /// `10 log10(Σ‖Δy_t‖² / Σ‖v_t‖²)`; infinite for noiseless data.
    pub realized_snr_db: f64,
}

/// Simulates traveltime delays for the plume and contaminates them with white noise.
pub fn simulate_truth_and_data<H: ObservationOperator>(
    h: &H,
    plume: &PlumeScenario,
    noise: NoiseLevel,
    seed: u64,
) -> Result<SyntheticData> {
    h.check_state(plume.state_dim(), "plume field length")?;
    let steps = plume.steps();
    if steps == 0 {
        return Err(Error::Input("simulation needs at least one step".into()));
    }
    let truth: Vec<DVector<f64>> = (1..=steps).map(|t| plume.field(t).clone()).collect();
    let signals: Vec<DVector<f64>> = truth.iter().map(|x| h.apply(x)).collect();
    let n = h.nrows();
    let signal_sq: f64 = signals.iter().map(|y| y.norm_squared()).sum();
    let noise_variance = match noise {
        NoiseLevel::SnrDb(db) => {
            if !db.is_finite() {
                return Err(Error::Input(format!("snr_db must be finite, got {db}")));
            }
            if n > 0 && signal_sq == 0.0 {
                return Err(Error::Input("cannot set an SNR for an all-zero signal".into()));
            }
            snr_noise_variance(signal_sq, steps * n.max(1), db)
        }
        NoiseLevel::Variance(v) => {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Input(format!("noise variance must be >= 0, got {v}")));
            }
            v
        }
    };
    let sd = noise_variance.sqrt();
    let mut noise_sq = 0.0;
    let mut eps = vec![0.0; n];
    let observations = signals
        .into_iter()
        .enumerate()
        .map(|(t, y)| {
            let mut r = rng::stream(seed, Purpose::ObservationNoise, t as u64 + 1, 0);
            rng::fill_standard_normal(&mut r, &mut eps);
            let v = DVector::from_iterator(n, eps.iter().map(|e| sd * e));
            noise_sq += v.norm_squared();
            y + v
        })
        .collect();
    Ok(SyntheticData {
        truth,
        observations,
        noise_variance,
        realized_snr_db: 10.0 * (signal_sq / noise_sq).log10(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Grid2D, Point2};
    use crate::tomography::{build_ray_operator, make_plume, Acquisition, PlumeParams};

    fn setup() -> (crate::tomography::RayOperator, PlumeScenario) {
        let g = Grid2D::new(20, 18, Point2::new(0.0, 0.0), 1.0, 1.0).unwrap();
        let acq = Acquisition::crosswell(6, 1.0, (5.0, 13.0), 24, 19.0, (1.0, 17.0));
        let h = build_ray_operator(&g, &acq).unwrap();
        let p = PlumeParams::crosswell_default(20.0, 18.0, 1.0, 19.0, 12);
        (h, make_plume(&g, &p, 12).unwrap())
    }

    #[test]
    fn snr_inversion() {
        assert!((snr_noise_variance(1.0, 1, 65.0) - 10f64.powf(-6.5)).abs() < 1e-22);
        // n components share the total noise power
        let v = snr_noise_variance(1.0, 288, 65.0);
        assert!((288.0 * v - 10f64.powf(-6.5)).abs() < 1e-20);
    }

    #[test]
    fn noiseless_data_is_exact() {
        let (h, plume) = setup();
        let d = simulate_truth_and_data(&h, &plume, NoiseLevel::Variance(0.0), 1).unwrap();
        for (x, z) in d.truth.iter().zip(&d.observations) {
            assert_eq!(&h.apply(x), z);
        }
    }

    #[test]
    fn realized_snr_near_target_and_reproducible() {
        let (h, plume) = setup();
        let a = simulate_truth_and_data(&h, &plume, NoiseLevel::SnrDb(65.0), 3).unwrap();
        assert!(a.observations.len() * a.observations[0].len() >= 1000);
        assert!((a.realized_snr_db - 65.0).abs() <= 0.5, "{}", a.realized_snr_db);
        let b = simulate_truth_and_data(&h, &plume, NoiseLevel::SnrDb(65.0), 3).unwrap();
        assert_eq!(a.observations, b.observations);
        let c = simulate_truth_and_data(&h, &plume, NoiseLevel::SnrDb(65.0), 4).unwrap();
        assert_ne!(a.observations, c.observations);
    }

    #[test]
    fn model_validation() {
        let (h, _) = setup();
        let h = Arc::new(h);
        let k = KernelSpec::exponential(1.0, 5.0);
        let m = h.ncols();
        assert!(StateSpaceModel::new(h.clone(), 1e-3, k, DVector::zeros(m), 0.0).is_ok());
        assert!(StateSpaceModel::new(h.clone(), 0.0, k, DVector::zeros(m), 0.0).is_err());
        assert!(StateSpaceModel::new(h.clone(), 1.0, k, DVector::zeros(m - 1), 0.0).is_err());
        assert!(StateSpaceModel::new(h, 1.0, k, DVector::zeros(m), -1.0).is_err());
    }
}
