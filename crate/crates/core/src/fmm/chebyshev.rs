//! Tensor-product Chebyshev interpolation on boxes.

use std::f64::consts::PI;

/// Chebyshev nodes of the first kind on `[-1, 1]` plus the tables needed to
/// evaluate the interpolation weights
/// `S_n(x, c_k) = 1/n + 2/n * sum_{j=1}^{n-1} T_j(x) T_j(c_k)`.
#[derive(Debug, Clone)]
pub struct ChebyshevBasis {
    n: usize,
    nodes: Vec<f64>,
    /// `T_j(c_k)` stored at `k * n + j`.
    node_poly: Vec<f64>,
}

impl ChebyshevBasis {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let thetas: Vec<f64> = (0..n)
            .map(|k| (2 * k + 1) as f64 * PI / (2 * n) as f64)
            .collect();
        let nodes = thetas.iter().map(|t| t.cos()).collect();
        let mut node_poly = vec![0.0; n * n];
        for (k, t) in thetas.iter().enumerate() {
            for j in 0..n {
                node_poly[k * n + j] = (j as f64 * t).cos();
            }
        }
        ChebyshevBasis {
            n,
            nodes,
            node_poly,
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of tensor nodes in 2D.
    pub fn rank(&self) -> usize {
        self.n * self.n
    }

    /// 1D weights `S_n(x, c_k)` for every node `k`, written to `out`.
    pub fn weights_1d(&self, x: f64, out: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(out.len(), n);
        let mut t = [0.0f64; 16];
        let t = &mut t[..n];
        t[0] = 1.0;
        if n > 1 {
            t[1] = x;
        }
        for j in 2..n {
            t[j] = 2.0 * x * t[j - 1] - t[j - 2];
        }
        let inv = 1.0 / n as f64;
        for (k, w) in out.iter_mut().enumerate() {
            let row = &self.node_poly[k * n..(k + 1) * n];
            let mut s = 0.0;
            for j in 1..n {
                s += t[j] * row[j];
            }
            *w = inv + 2.0 * inv * s;
        }
    }

    /// 2D weights for a point in normalized box coordinates; node `a + n * b`
    /// sits at `(c_a, c_b)`.
    pub fn weights_2d(&self, xi: f64, eta: f64, out: &mut [f64]) {
        let n = self.n;
        let mut wx = [0.0f64; 16];
        let mut wy = [0.0f64; 16];
        self.weights_1d(xi, &mut wx[..n]);
        self.weights_1d(eta, &mut wy[..n]);
        for b in 0..n {
            for a in 0..n {
                out[a + n * b] = wx[a] * wy[b];
            }
        }
    }

    /// Coordinates of the tensor nodes of a box with given center and half-width.
    pub fn box_nodes(&self, cx: f64, cy: f64, half: f64) -> Vec<(f64, f64)> {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n);
        for b in 0..n {
            for a in 0..n {
                out.push((cx + half * self.nodes[a], cy + half * self.nodes[b]));
            }
        }
        out
    }
}
