//! Synthetic crosswell traveltime benchmark.
//!
//! Straight rays connect every source on the injection well with every
//! receiver on the observation well. Entry `(i, j)` of the ray operator is
//! the length of ray `i` inside cell `j`, so `H Δs` is the traveltime delay
//! produced by a slowness perturbation `Δs`. The moving plume is a sum of
//! anisotropic Gaussian blobs whose parameters interpolate between a start
//! and an end state until a breakthrough step, after which the field freezes.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Grid2D, Point2};
use crate::obs::{ObservationOperator, SparseMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub sources: Vec<Point2>,
    pub receivers: Vec<Point2>,
}

impl Acquisition {
    /// Sources on the vertical line `x = source_x`, receivers on `x = receiver_x`,
    /// each evenly spaced over the given depth interval (endpoints included).
    pub fn crosswell(
        n_sources: usize,
        source_x: f64,
        source_y: (f64, f64),
        n_receivers: usize,
        receiver_x: f64,
        receiver_y: (f64, f64),
    ) -> Self {
        let spread = |k: usize, (lo, hi): (f64, f64), i: usize| {
            if k <= 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (k - 1) as f64
            }
        };
        Acquisition {
            sources: (0..n_sources)
                .map(|i| Point2::new(source_x, spread(n_sources, source_y, i)))
                .collect(),
            receivers: (0..n_receivers)
                .map(|i| Point2::new(receiver_x, spread(n_receivers, receiver_y, i)))
                .collect(),
        }
    }

    pub fn n_rays(&self) -> usize {
        self.sources.len() * self.receivers.len()
    }

    /// Endpoints of ray `i`; rays are ordered source-major.
    pub fn ray(&self, i: usize) -> (Point2, Point2) {
        let nr = self.receivers.len();
        (self.sources[i / nr], self.receivers[i % nr])
    }

    pub fn rays(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        self.sources
            .iter()
            .flat_map(move |&s| self.receivers.iter().map(move |&r| (s, r)))
    }
}

/// Sparse `n x m` matrix of ray-cell intersection lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct RayOperator {
    matrix: SparseMatrix,
    lengths: Vec<f64>,
}

impl RayOperator {
    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Euclidean length of each ray.
    pub fn ray_lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }
}

impl ObservationOperator for RayOperator {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }
    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.matrix.apply(x)
    }
    fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.matrix.mul_dense(b)
    }
    fn dense_mul_transpose(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        self.matrix.dense_mul_transpose(a)
    }
    fn transpose_dense(&self) -> DMatrix<f64> {
        self.matrix.transpose_dense()
    }
}

/// Cell index along one axis for a coordinate in cell units. Coordinates
/// exactly on a cell edge belong to the lower/left cell.
fn axis_cell(u: f64, n: usize) -> usize {
    let k = u.ceil() - 1.0;
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n - 1)
    }
}

/// Exact intersection lengths of the segment `a -> b` with the grid cells.
pub fn trace_ray(grid: &Grid2D, a: Point2, b: Point2) -> Result<Vec<(usize, f64)>> {
    let len = a.distance(b);
    if len == 0.0 {
        return Err(Error::Input(format!(
            "zero-length ray: source and receiver coincide at ({}, {})",
            a.x, a.y
        )));
    }
    let ext = grid.extent();
    for p in [a, b] {
        if !ext.contains(p) {
            return Err(Error::Input(format!(
                "ray endpoint ({}, {}) lies outside the grid",
                p.x, p.y
            )));
        }
    }
    // parametric crossings of every interior grid line, plus both endpoints
    let mut ts = vec![0.0, 1.0];
    let mut crossings = |p0: f64, p1: f64, o: f64, h: f64, n: usize| {
        if p0 == p1 {
            return;
        }
        let (lo, hi) = (p0.min(p1), p0.max(p1));
        for k in 1..n {
            let line = o + k as f64 * h;
            if line > lo && line < hi {
                ts.push((line - p0) / (p1 - p0));
            }
        }
    };
    crossings(a.x, b.x, grid.origin.x, grid.dx, grid.nx);
    crossings(a.y, b.y, grid.origin.y, grid.dy, grid.ny);
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    let mut out: Vec<(usize, f64)> = Vec::with_capacity(ts.len());
    for w in ts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        let tm = 0.5 * (t0 + t1);
        let mx = a.x + tm * (b.x - a.x);
        let my = a.y + tm * (b.y - a.y);
        let i = axis_cell((mx - grid.origin.x) / grid.dx, grid.nx);
        let j = axis_cell((my - grid.origin.y) / grid.dy, grid.ny);
        let cell = grid.index(i, j);
        let seg = (t1 - t0) * len;
        match out.last_mut() {
            Some((c, l)) if *c == cell => *l += seg,
            _ => out.push((cell, seg)),
        }
    }
    Ok(out)
}

pub fn build_ray_operator(grid: &Grid2D, acq: &Acquisition) -> Result<RayOperator> {
    let mut rows = Vec::with_capacity(acq.n_rays());
    let mut lengths = Vec::with_capacity(acq.n_rays());
    for (s, r) in acq.rays() {
        rows.push(trace_ray(grid, s, r)?);
        lengths.push(s.distance(r));
    }
    Ok(RayOperator {
        matrix: SparseMatrix::from_rows(grid.len(), rows)?,
        lengths,
    })
}

/// `Δy = H Δs`.
pub fn apply_forward(h: &RayOperator, ds: &DVector<f64>) -> Result<DVector<f64>> {
    h.check_state(ds.len(), "apply_forward slowness vector")?;
    Ok(h.apply(ds))
}

/// Parameters of one Gaussian blob. Every pair is `(start, end)`; values
/// are linearly interpolated by the plume's progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobParams {
    pub amplitude: (f64, f64),
    pub center_x: (f64, f64),
    pub center_y: (f64, f64),
    /// Standard deviations along x.
    pub spread_x: (f64, f64),
    pub spread_y: (f64, f64),
}

impl BlobParams {
    pub fn fixed(amplitude: f64, center: Point2, spread: (f64, f64)) -> Self {
        BlobParams {
            amplitude: (amplitude, amplitude),
            center_x: (center.x, center.x),
            center_y: (center.y, center.y),
            spread_x: (spread.0, spread.0),
            spread_y: (spread.1, spread.1),
        }
    }

    fn at(&self, tau: f64, p: Point2) -> f64 {
        let lerp = |(a, b): (f64, f64)| a + tau * (b - a);
        let dx = (p.x - lerp(self.center_x)) / lerp(self.spread_x);
        let dy = (p.y - lerp(self.center_y)) / lerp(self.spread_y);
        lerp(self.amplitude) * (-0.5 * (dx * dx + dy * dy)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlumeParams {
    /// Step at which the plume stops evolving.
    pub breakthrough_step: usize,
    pub blobs: Vec<BlobParams>,
}

impl PlumeParams {
    /// Default scenario on a domain of given width and height with the
    /// injection well at `x = source_x` and the observation well at
    /// `x = receiver_x`: a main lobe advancing toward the observation well and
    /// a thinner lobe migrating up-dip.
    pub fn crosswell_default(width: f64, height: f64, source_x: f64, receiver_x: f64, steps: usize) -> Self {
        let gap = receiver_x - source_x;
        let mid_y = 0.5 * height;
        PlumeParams {
            breakthrough_step: ((steps as f64) * 0.4).round().max(1.0) as usize,
            blobs: vec![
                BlobParams {
                    amplitude: (1.0, 1.0),
                    center_x: (source_x, source_x + 0.55 * gap),
                    center_y: (mid_y, mid_y - 0.05 * height),
                    spread_x: (0.03 * width, 0.25 * gap),
                    spread_y: (0.04 * height, 0.12 * height),
                },
                BlobParams {
                    amplitude: (0.4, 0.7),
                    center_x: (source_x, source_x + 0.8 * gap),
                    center_y: (mid_y + 0.05 * height, mid_y - 0.2 * height),
                    spread_x: (0.02 * width, 0.12 * gap),
                    spread_y: (0.02 * height, 0.05 * height),
                },
            ],
        }
    }

    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.breakthrough_step == 0 {
            out.push(("breakthrough_step", "must be >= 1".to_string()));
        }
        let mut sign = 0.0f64;
        for (k, b) in self.blobs.iter().enumerate() {
            for s in [b.spread_x.0, b.spread_x.1, b.spread_y.0, b.spread_y.1] {
                if !(s.is_finite() && s > 0.0) {
                    out.push(("blobs", format!("blob {k}: spreads must be finite and > 0")));
                    break;
                }
            }
            for a in [b.amplitude.0, b.amplitude.1] {
                if !a.is_finite() {
                    out.push(("blobs", format!("blob {k}: amplitude must be finite")));
                } else if a != 0.0 {
                    if sign != 0.0 && a.signum() != sign {
                        out.push(("blobs", "all amplitudes must share one sign".to_string()));
                    }
                    sign = a.signum();
                }
            }
        }
        out
    }
}

/// Slowness perturbation fields `Δs_t` for `t = 0..=T`; `Δs_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlumeScenario {
    fields: Vec<DVector<f64>>,
}

impl PlumeScenario {
    pub fn from_fields(fields: Vec<DVector<f64>>) -> Result<Self> {
        let Some(first) = fields.first() else {
            return Err(Error::Input("plume needs at least the initial field".into()));
        };
        if first.iter().any(|&v| v != 0.0) {
            return Err(Error::Input("plume field at step 0 must be zero".into()));
        }
        let m = first.len();
        for (t, f) in fields.iter().enumerate() {
            if f.len() != m {
                return Err(Error::dim("plume field length", m, f.len()));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("plume field at step {t} is not finite")));
            }
        }
        Ok(PlumeScenario { fields })
    }

    /// Number of assimilation steps `T` (fields exist for `0..=T`).
    pub fn steps(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn field(&self, t: usize) -> &DVector<f64> {
        &self.fields[t]
    }

    pub fn state_dim(&self) -> usize {
        self.fields[0].len()
    }

    /// Writes `step cell value` lines for every nonzero entry.
    pub fn export(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "# step cell value (steps={}, cells={})", self.steps(), self.state_dim()).unwrap();
        for (t, f) in self.fields.iter().enumerate() {
            for (k, &v) in f.iter().enumerate() {
                if v != 0.0 {
                    writeln!(s, "{t} {k} {v:.17e}").unwrap();
                }
            }
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Reads the format written by [`PlumeScenario::export`]. Missing entries are zero.
    pub fn import(path: &Path, cells: usize, steps: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut fields = vec![DVector::zeros(cells); steps + 1];
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Input(format!("{}:{}: expected `step cell value`", path.display(), ln + 1));
            let mut it = line.split_whitespace();
            let t: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let k: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let v: f64 = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            if it.next().is_some() {
                return Err(bad());
            }
            if t > steps || k >= cells {
                return Err(Error::Input(format!(
                    "{}:{}: step {t} or cell {k} out of range",
                    path.display(),
                    ln + 1
                )));
            }
            fields[t][k] = v;
        }
        Self::from_fields(fields)
    }
}

/// Evaluates the parametric plume on the grid for steps `0..=steps`.
pub fn make_plume(grid: &Grid2D, params: &PlumeParams, steps: usize) -> Result<PlumeScenario> {
    if steps == 0 {
        return Err(Error::Input("plume needs at least one step".into()));
    }
    if let Some((field, msg)) = params.violations().into_iter().next() {
        return Err(Error::Input(format!("plume.{field}: {msg}")));
    }
    let centers = grid.cell_centers();
    let mut fields = vec![DVector::zeros(grid.len())];
    for t in 1..=steps {
        let tau = t.min(params.breakthrough_step) as f64 / params.breakthrough_step as f64;
        let f = DVector::from_iterator(
            grid.len(),
            centers
                .points()
                .iter()
                .map(|&p| params.blobs.iter().map(|b| b.at(tau, p)).sum::<f64>()),
        );
        fields.push(f);
    }
    PlumeScenario::from_fields(fields)
}
