//! Uniform 2D grids and point sets.
//!
//! State vectors are indexed row-major with x fastest: cell `(i, j)` maps to
//! `k = j * nx + i`. The ray operator, FMM charges and filter states all use
//! this ordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    #[inline]
    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Point2,
    pub max: Point2,
}

impl BoundingBox {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

/// A uniform rectilinear grid of `nx * ny` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub origin: Point2,
    pub dx: f64,
    pub dy: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, origin: Point2, dx: f64, dy: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Input(format!("grid needs nx, ny >= 1, got {nx} x {ny}")));
        }
        if !(dx.is_finite() && dx > 0.0 && dy.is_finite() && dy > 0.0) {
            return Err(Error::Input(format!("grid spacing must be positive, got dx={dx}, dy={dy}")));
        }
        if !origin.is_finite() {
            return Err(Error::Input("grid origin must be finite".into()));
        }
        Ok(Grid2D {
            nx,
            ny,
            origin,
            dx,
            dy,
        })
    }

    /// Number of cells, which is the state dimension.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn cell(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    pub fn center(&self, i: usize, j: usize) -> Point2 {
        Point2::new(
            self.origin.x + (i as f64 + 0.5) * self.dx,
            self.origin.y + (j as f64 + 0.5) * self.dy,
        )
    }

    pub fn extent(&self) -> BoundingBox {
        BoundingBox {
            min: self.origin,
            max: Point2::new(
                self.origin.x + self.nx as f64 * self.dx,
                self.origin.y + self.ny as f64 * self.dy,
            ),
        }
    }

    /// Cell centers in state order.
    pub fn cell_centers(&self) -> PointSet {
        let mut pts = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                pts.push(self.center(i, j));
            }
        }
        PointSet::new(pts).expect("grid centers are finite")
    }
}

/// A finite, non-empty list of 2D points with a cached bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<Point2>,
    bbox: BoundingBox,
}

impl PointSet {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("point set must contain at least one point".into()));
        }
        if let Some(k) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Input(format!("point {k} has non-finite coordinates")));
        }
        let mut min = points[0];
        let mut max = points[0];
        for p in &points[1..] {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Ok(PointSet {
            points,
            bbox: BoundingBox { min, max },
        })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn bounding_box(&self) -> BoundingBox {
        self.bbox
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
