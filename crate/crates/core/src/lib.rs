//! Kalman filtering for quasi-continuous data assimilation with linear cost in
//! the state dimension.
//!
//! The HiKF engine ([`filters::hikf`]) propagates the `m x n` cross-covariance
//! `P Hᵀ` instead of the full covariance. The one dense kernel product it
//! needs, `Q Hᵀ`, is evaluated by a Chebyshev-interpolation fast multipole
//! method ([`fmm`]). A dense Kalman filter and a perturbed-observation EnKF
//! serve as baselines on a synthetic crosswell traveltime benchmark
//! ([`tomography`]).

pub mod config;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod fmm;
pub mod geom;
pub mod kernel;
pub mod metrics;
pub mod numerics;
pub mod obs;
pub mod rng;
pub mod ssm;
pub mod tomography;

pub use error::{Error, Result};
