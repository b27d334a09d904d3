//! Error, spectrum and cost diagnostics.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filters::CovarianceView;
use crate::numerics::sym_eigenvalues;

/// Fraction of total variance used by the effective-rank diagnostic.
pub const DEFAULT_RANK_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeError {
    pub value: f64,
    /// Set when `‖x_ref‖ = 0`; `value` is then the absolute norm.
    pub absolute: bool,
}

/// `‖x_est - x_ref‖ / ‖x_ref‖`.
pub fn relative_error(x_est: &DVector<f64>, x_ref: &DVector<f64>) -> Result<RelativeError> {
    if x_est.len() != x_ref.len() {
        return Err(Error::dim("relative_error", x_ref.len(), x_est.len()));
    }
    let diff = (x_est - x_ref).norm();
    let denom = x_ref.norm();
    Ok(if denom > 0.0 {
        RelativeError {
            value: diff / denom,
            absolute: false,
        }
    } else {
        RelativeError {
            value: diff,
            absolute: true,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectiveRank {
    pub rank: usize,
    /// Some input was negative and was treated as zero.
    pub clamped: bool,
    /// The spectrum sums to zero; `rank` is 0.
    pub degenerate: bool,
}

/// Smallest `k` with `Σ_{i<k} λ_i ≥ fraction · Σ λ_i` for a descending spectrum.
pub fn effective_rank(eigenvalues: &[f64], fraction: f64) -> Result<EffectiveRank> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Input(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Input("eigenvalues must be sorted descending".into()));
    }
    let clamped = eigenvalues.iter().any(|&v| v < 0.0);
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return Ok(EffectiveRank {
            rank: 0,
            clamped,
            degenerate: true,
        });
    }
    let target = fraction * total;
    let mut acc = 0.0;
    let mut rank = eigenvalues.len();
    for (k, v) in eigenvalues.iter().enumerate() {
        acc += v.max(0.0);
        // relative slack so that fraction = 1 is reached despite rounding
        if acc >= target * (1.0 - 1e-12) {
            rank = k + 1;
            break;
        }
    }
    Ok(EffectiveRank {
        rank,
        clamped,
        degenerate: false,
    })
}

/// Descending, clamped eigenvalues of a posterior covariance, or `None` when
/// the filter does not carry one.
pub fn posterior_spectrum(cov: &CovarianceView<'_>) -> Option<Vec<f64>> {
    let mut eig = match cov {
        CovarianceView::Dense(p) => sym_eigenvalues(p),
        CovarianceView::Ensemble(a) => {
            // nonzero eigenvalues of A Aᵀ are those of Aᵀ A
            let mut e = sym_eigenvalues(&(a.transpose() * a));
            e.resize(a.nrows().max(e.len()), 0.0);
            e
        }
        CovarianceView::Unavailable => return None,
    };
    for v in &mut eig {
        *v = v.max(0.0);
    }
    eig.sort_by(|a, b| b.total_cmp(a));
    Some(eig)
}

/// Wall-clock and storage accounting for one filter run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CostRecord {
    pub filter: String,
    pub precompute_seconds: f64,
    pub online_seconds: f64,
    pub storage_bytes: usize,
}

/// Dominant payload bytes: `8 m²` for the dense KF.
pub fn kf_storage_bytes(m: usize) -> usize {
    8 * m * m
}

/// Two `m x n` matrices and two length-`m` vectors.
pub fn hikf_storage_bytes(m: usize, n: usize) -> usize {
    8 * m * (2 * n + 2)
}

pub fn enkf_storage_bytes(m: usize, members: usize) -> usize {
    8 * m * members
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostTable {
    pub rows: Vec<CostRecord>,
}

impl CostTable {
    pub fn from_records(records: &[CostRecord]) -> Self {
        CostTable { rows: records.to_vec() }
    }

    pub fn get(&self, filter: &str) -> Option<&CostRecord> {
        self.rows.iter().find(|r| r.filter == filter)
    }

    /// `online(a) / online(b)`.
    pub fn online_ratio(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.get(a)?.online_seconds / self.get(b)?.online_seconds)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("filter,precompute_seconds,online_seconds,storage_bytes\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.6},{:.6},{}\n", r.filter, r.precompute_seconds, r.online_seconds, r.storage_bytes));
        }
        s
    }
}

/// Time and storage for a set of runs.
pub fn account_costs(records: &[CostRecord]) -> CostTable {
    CostTable::from_records(records)
}

/// Per-step diagnostics of one filter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub error_vs_truth: f64,
    /// Absent when no dense KF ran alongside.
    pub error_vs_kf: Option<f64>,
    pub effective_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterReport {
    pub filter: String,
    pub steps: Vec<StepMetrics>,
    #[serde(skip)]
    pub final_variance: Vec<f64>,
    pub final_spectrum: Option<Vec<f64>>,
    pub cost: CostRecord,
    /// `false` if the run stopped early on a numerical failure.
    pub completed: bool,
}

/// Everything emitted by one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub filters: Vec<FilterReport>,
    pub noise_variance: f64,
    pub realized_snr_db: f64,
}

impl RunReport {
    pub fn filter(&self, name: &str) -> Option<&FilterReport> {
        self.filters.iter().find(|f| f.filter == name)
    }

    pub fn costs(&self) -> CostTable {
        account_costs(&self.filters.iter().map(|f| f.cost.clone()).collect::<Vec<_>>())
    }
}
