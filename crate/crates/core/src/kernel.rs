//! Generalized covariance functions.
//!
//! A [`KernelSpec`] defines the model-error covariance entrywise as
//! `Q_ij = K(|x_i - x_j|)`. The Gaussian and exponential families share one
//! code path, the powered exponential `variance * exp(-(r / length_scale)^power)`,
//! with the power pinned to 2 for [`KernelFamily::Gaussian`]. The
//! exponential family honours the configured power (default 1), which makes
//! it the general benchmark kernel.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Exponential,
    Logarithm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Point variance `K(0)`; ignored by the logarithm family.
    #[serde(default = "one")]
    pub variance: f64,
    #[serde(default = "one")]
    pub length_scale: f64,
    /// Exponent of the powered exponential; only read for the exponential family.
    #[serde(default = "one")]
    pub power: f64,
    /// Amplitude `A < 0` of `A log r`.
    #[serde(default = "minus_one")]
    pub log_amplitude: f64,
}

fn one() -> f64 {
    1.0
}

fn minus_one() -> f64 {
    -1.0
}

impl KernelSpec {
    pub fn gaussian(variance: f64, length_scale: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Gaussian,
            variance,
            length_scale,
            power: 2.0,
            log_amplitude: -1.0,
        }
    }

    pub fn exponential(variance: f64, length_scale: f64) -> Self {
        Self::powered_exponential(variance, length_scale, 1.0)
    }

    /// `theta * exp(-r^p / l^p)`.
    pub fn powered_exponential(theta: f64, length_scale: f64, power: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Exponential,
            variance: theta,
            length_scale,
            power,
            log_amplitude: -1.0,
        }
    }

    pub fn logarithm(amplitude: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Logarithm,
            variance: 1.0,
            length_scale: 1.0,
            power: 1.0,
            log_amplitude: amplitude,
        }
    }

    /// Checks parameter ranges; returns one message per violation, keyed by field name.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        match self.family {
            KernelFamily::Gaussian | KernelFamily::Exponential => {
                if !(self.variance.is_finite() && self.variance >= 0.0) {
                    out.push(("variance", format!("must be finite and >= 0, got {}", self.variance)));
                }
                if !(self.length_scale.is_finite() && self.length_scale > 0.0) {
                    out.push((
                        "length_scale",
                        format!("must be finite and > 0, got {}", self.length_scale),
                    ));
                }
                if self.family == KernelFamily::Exponential
                    && !(self.power > 0.0 && self.power <= 2.0)
                {
                    out.push(("power", format!("must lie in (0, 2], got {}", self.power)));
                }
            }
            KernelFamily::Logarithm => {
                if !(self.log_amplitude.is_finite() && self.log_amplitude < 0.0) {
                    out.push((
                        "log_amplitude",
                        format!("must be finite and < 0, got {}", self.log_amplitude),
                    ));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some((field, msg)) => Err(Error::Input(format!("kernel.{field}: {msg}"))),
        }
    }

    /// Effective exponent of the powered exponential.
    fn exponent(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => 2.0,
            _ => self.power,
        }
    }

    /// Evaluates `K(r)`.
    pub fn evaluate(&self, r: f64) -> Result<f64> {
        if !r.is_finite() {
            return Err(Error::Input(format!("kernel distance must be finite, got {r}")));
        }
        if r < 0.0 {
            return Err(Error::Input(format!("kernel distance must be >= 0, got {r}")));
        }
        if self.family == KernelFamily::Logarithm && r == 0.0 {
            return Err(Error::Domain("logarithm kernel is undefined at r = 0".into()));
        }
        Ok(self.pair_value(r))
    }

    /// Infallible evaluation used inside matrix assembly. The logarithm kernel's
    /// singular value at `r = 0` is replaced by 0.
    #[inline]
    pub fn pair_value(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::Logarithm => {
                if r == 0.0 {
                    0.0
                } else {
                    self.log_amplitude * r.ln()
                }
            }
            _ => {
                let s = r / self.length_scale;
                let p = self.exponent();
                let arg = if p == 2.0 {
                    s * s
                } else if p == 1.0 {
                    s
                } else {
                    s.powf(p)
                };
                self.variance * (-arg).exp()
            }
        }
    }

    /// `K` between two points.
    #[inline]
    pub fn between(&self, a: Point2, b: Point2) -> f64 {
        self.pair_value(a.distance(b))
    }

    /// Diagonal value of the Gram matrix, `K(0)` (0 for the logarithm family by convention).
    pub fn diagonal(&self) -> f64 {
        self.pair_value(0.0)
    }
}

/// Dense Gram matrix `K(|x_i - x_j|)`, exactly symmetric.
///
/// Follows [`KernelSpec::pair_value`], so coincident points under the
/// logarithm kernel contribute 0.
pub fn dense_gram(spec: &KernelSpec, points: &[Point2]) -> DMatrix<f64> {
    let m = points.len();
    let mut g = DMatrix::zeros(m, m);
    for j in 0..m {
        g[(j, j)] = spec.pair_value(0.0);
        for i in (j + 1)..m {
            let v = spec.between(points[i], points[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Selected entries of `K v` by direct summation, `O(rows x m)` without
/// storing the matrix. This is the reference the fast summation is checked
/// against.
pub fn direct_rows(spec: &KernelSpec, points: &[Point2], rows: &[usize], v: &[f64]) -> Vec<f64> {
    rows.par_iter()
        .map(|&i| {
            let xi = points[i];
            points.iter().zip(v).map(|(xj, vj)| spec.between(xi, *xj) * vj).sum()
        })
        .collect()
}

/// `K v` by direct summation, `O(m²)`.
pub fn direct_sum(spec: &KernelSpec, points: &[Point2], v: &[f64]) -> Vec<f64> {
    let rows: Vec<usize> = (0..points.len()).collect();
    direct_rows(spec, points, &rows, v)
}
