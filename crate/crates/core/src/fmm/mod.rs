//! Black-box fast multipole method for kernel Gram matrices in 2D.
//!
//! The tree is an adaptive quadtree over a tight bounding square. Far-field
//! interactions are factored through tensor Chebyshev interpolation on both
//! the source and target boxes, so only kernel evaluations are needed. The
//! interaction lists follow the usual adaptive scheme:
//!
//! * U: touching leaf pairs, evaluated directly (near field).
//! * V: same-level, non-touching children of the parent's neighbours (M2L).
//! * W: for a leaf target, non-touching descendants of a touching box (M2P).
//! * X: the dual of W, a coarser non-touching leaf feeding a local expansion (P2L).
//!
//! Every (target, source) point pair is covered by exactly one of these.
//! All operators, including the dense near-field blocks, are precomputed by
//! [`FmmTree::build`]; [`FmmTree::matvec`] only streams through them.

mod chebyshev;

use std::collections::{HashMap, VecDeque};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use chebyshev::ChebyshevBasis;

use crate::error::{Error, Result};
use crate::geom::{Point2, PointSet};
use crate::kernel::KernelSpec;

/// Leaves never split beyond this depth, which bounds the tree for coincident points.
pub const MAX_DEPTH: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmmConfig {
    /// Chebyshev nodes per dimension.
    #[serde(default = "default_n_cheb")]
    pub n_cheb: usize,
    #[serde(default = "default_max_leaf")]
    pub max_leaf_points: usize,
    /// Informational only; accuracy is set by `n_cheb`.
    #[serde(default)]
    pub tolerance_hint: Option<f64>,
}

fn default_n_cheb() -> usize {
    5
}

fn default_max_leaf() -> usize {
    64
}

impl Default for FmmConfig {
    fn default() -> Self {
        FmmConfig {
            n_cheb: default_n_cheb(),
            max_leaf_points: default_max_leaf(),
            tolerance_hint: None,
        }
    }
}

impl FmmConfig {
    pub fn new(n_cheb: usize, max_leaf_points: usize) -> Self {
        FmmConfig {
            n_cheb,
            max_leaf_points,
            tolerance_hint: None,
        }
    }

    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(2..=12).contains(&self.n_cheb) {
            out.push(("n_cheb", format!("must lie in [2, 12], got {}", self.n_cheb)));
        }
        if self.max_leaf_points == 0 {
            out.push(("max_leaf_points", "must be >= 1".to_string()));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some((field, msg)) => Err(Error::Input(format!("fmm.{field}: {msg}"))),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    level: u32,
    ix: i64,
    iy: i64,
    center: Point2,
    half: f64,
    /// Position among the parent's quadrants (0..4, x bit then y bit).
    quadrant: usize,
    parent: Option<usize>,
    children: Vec<usize>,
    /// Range into the permuted point order; contiguous for the whole subtree.
    start: usize,
    end: usize,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    fn count(&self) -> usize {
        self.end - self.start
    }
}

/// Closed boxes `a` and `b` share at least a corner.
fn touches(a: &Node, b: &Node) -> bool {
    let (fine, coarse) = if a.level >= b.level { (a, b) } else { (b, a) };
    let d = fine.level - coarse.level;
    let cx0 = coarse.ix << d;
    let cx1 = (coarse.ix + 1) << d;
    let cy0 = coarse.iy << d;
    let cy1 = (coarse.iy + 1) << d;
    fine.ix + 1 >= cx0 && fine.ix <= cx1 && fine.iy + 1 >= cy0 && fine.iy <= cy1
}

/// A block stored in the operator arena: `rows x cols`, row-major, at `offset`.
#[derive(Debug, Clone, Copy)]
struct Block {
    offset: usize,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Default)]
struct Lists {
    /// (source node, M2L operator index)
    v: Vec<(usize, usize)>,
    /// (source leaf, P2L block)
    x: Vec<(usize, Block)>,
    /// (source node, M2P block); leaf targets only
    w: Vec<(usize, Block)>,
    /// (source leaf, P2P block); leaf targets only
    u: Vec<(usize, Block)>,
}

/// Summary counts describing a built tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TreeStats {
    pub nodes: usize,
    pub leaves: usize,
    pub depth: u32,
    pub m2l_pairs: usize,
    pub near_pairs: usize,
    pub w_pairs: usize,
    pub x_pairs: usize,
    pub operator_bytes: usize,
}

/// A built FMM tree with all operators precomputed. Immutable after construction.
#[derive(Debug, Clone)]
pub struct FmmTree {
    config: FmmConfig,
    kernel: KernelSpec,
    basis: ChebyshevBasis,
    /// `perm[k]` is the original index of the `k`-th point in tree order.
    perm: Vec<usize>,
    nodes: Vec<Node>,
    lists: Vec<Lists>,
    /// Per-node interpolation block `count x rank` (leaves only).
    leaf_interp: Vec<Option<Block>>,
    /// Child-to-parent transfer `rank x rank` per quadrant; `(M_parent)_a += sum_b T[a][b] (M_child)_b`.
    m2m: [Vec<f64>; 4],
    m2l: Vec<Vec<f64>>,
    arena: Vec<f64>,
}

impl FmmTree {
    pub fn build(points: &PointSet, kernel: KernelSpec, config: FmmConfig) -> Result<Self> {
        config.validate()?;
        kernel.validate()?;
        let pts = points.points();
        let m = pts.len();
        let basis = ChebyshevBasis::new(config.n_cheb);
        let rank = basis.rank();

        // root: tight bounding square with a tiny relative margin
        let bb = points.bounding_box();
        let side = bb.width().max(bb.height());
        let root_center = Point2::new(0.5 * (bb.min.x + bb.max.x), 0.5 * (bb.min.y + bb.max.y));
        let scale = root_center.x.abs().max(root_center.y.abs()).max(side);
        let root_half = if side > 0.0 {
            0.5 * side * (1.0 + 1e-12) + 1e-12 * scale
        } else {
            0.5
        };

        let mut perm: Vec<usize> = (0..m).collect();
        let mut nodes = vec![Node {
            level: 0,
            ix: 0,
            iy: 0,
            center: root_center,
            half: root_half,
            quadrant: 0,
            parent: None,
            children: Vec::new(),
            start: 0,
            end: m,
        }];
        let mut queue = VecDeque::from([0usize]);
        let mut scratch: Vec<usize> = Vec::with_capacity(m);
        while let Some(id) = queue.pop_front() {
            let node = nodes[id].clone();
            if node.count() <= config.max_leaf_points || node.level >= MAX_DEPTH {
                continue;
            }
            // stable counting partition into quadrants; split lines go low/left
            let quad_of = |k: usize| -> usize {
                let p = pts[k];
                let qx = usize::from(p.x > node.center.x);
                let qy = usize::from(p.y > node.center.y);
                qx | (qy << 1)
            };
            let mut counts = [0usize; 4];
            for &k in &perm[node.start..node.end] {
                counts[quad_of(k)] += 1;
            }
            scratch.clear();
            for q in 0..4 {
                scratch.extend(perm[node.start..node.end].iter().copied().filter(|&k| quad_of(k) == q));
            }
            perm[node.start..node.end].copy_from_slice(&scratch);
            let mut start = node.start;
            let child_half = 0.5 * node.half;
            for (q, &c) in counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let (qx, qy) = ((q & 1) as i64, (q >> 1) as i64);
                let child = Node {
                    level: node.level + 1,
                    ix: 2 * node.ix + qx,
                    iy: 2 * node.iy + qy,
                    center: Point2::new(
                        node.center.x + if qx == 1 { child_half } else { -child_half },
                        node.center.y + if qy == 1 { child_half } else { -child_half },
                    ),
                    half: child_half,
                    quadrant: q,
                    parent: Some(id),
                    children: Vec::new(),
                    start,
                    end: start + c,
                };
                start += c;
                let cid = nodes.len();
                nodes.push(child);
                nodes[id].children.push(cid);
                queue.push_back(cid);
            }
        }

        let mut tree = FmmTree {
            config,
            kernel,
            basis,
            perm,
            nodes,
            lists: Vec::new(),
            leaf_interp: Vec::new(),
            m2m: Default::default(),
            m2l: Vec::new(),
            arena: Vec::new(),
        };
        tree.build_transfer_operators(rank);
        tree.build_lists(pts);
        Ok(tree)
    }

    fn build_transfer_operators(&mut self, rank: usize) {
        let n = self.basis.order();
        let child_nodes_unit: Vec<f64> = self.basis.nodes().to_vec();
        let mut w = vec![0.0; rank];
        for q in 0..4 {
            let ox = if q & 1 == 1 { 0.5 } else { -0.5 };
            let oy = if q >> 1 == 1 { 0.5 } else { -0.5 };
            let mut t = vec![0.0; rank * rank];
            // child node b, expressed in parent-normalized coordinates
            for bj in 0..n {
                for bi in 0..n {
                    let b = bi + n * bj;
                    let xi = ox + 0.5 * child_nodes_unit[bi];
                    let eta = oy + 0.5 * child_nodes_unit[bj];
                    self.basis.weights_2d(xi, eta, &mut w);
                    for a in 0..rank {
                        t[a * rank + b] = w[a];
                    }
                }
            }
            self.m2m[q] = t;
        }
    }

    fn push_block(&mut self, rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Block {
        let offset = self.arena.len();
        self.arena.reserve(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                self.arena.push(f(r, c));
            }
        }
        Block { offset, rows, cols }
    }

    fn build_lists(&mut self, pts: &[Point2]) {
        let nn = self.nodes.len();
        let rank = self.basis.rank();
        let mut near: Vec<Vec<usize>> = vec![Vec::new(); nn];
        near[0].push(0);
        let mut lists = vec![Lists::default(); nn];
        let mut m2l_index: HashMap<(u32, i64, i64), usize> = HashMap::new();

        // V and X lists, and neighbour lists, top-down (ids are in BFS order)
        for id in 0..nn {
            let children = self.nodes[id].children.clone();
            for &t in &children {
                let mut my_near = Vec::new();
                for &c in &near[id] {
                    let cands: Vec<usize> = if self.nodes[c].is_leaf() {
                        vec![c]
                    } else {
                        self.nodes[c].children.clone()
                    };
                    for d in cands {
                        if touches(&self.nodes[t], &self.nodes[d]) {
                            my_near.push(d);
                        } else if self.nodes[d].level == self.nodes[t].level {
                            let key = (
                                self.nodes[t].level,
                                self.nodes[d].ix - self.nodes[t].ix,
                                self.nodes[d].iy - self.nodes[t].iy,
                            );
                            let op = match m2l_index.get(&key) {
                                Some(&op) => op,
                                None => {
                                    let op = self.m2l.len();
                                    let mat = self.m2l_operator(self.nodes[t].half, key.1, key.2);
                                    self.m2l.push(mat);
                                    m2l_index.insert(key, op);
                                    op
                                }
                            };
                            lists[t].v.push((d, op));
                        } else {
                            // coarser leaf feeding t's local expansion
                            let nodes_t = self.node_coords(t);
                            let (s0, s1) = (self.nodes[d].start, self.nodes[d].end);
                            let src: Vec<Point2> = self.perm[s0..s1].iter().map(|&k| pts[k]).collect();
                            let kernel = self.kernel;
                            let blk = self.push_block(rank, src.len(), |r, c| {
                                kernel.between(nodes_t[r], src[c])
                            });
                            lists[t].x.push((d, blk));
                        }
                    }
                }
                near[t] = my_near;
            }
        }

        // U and W lists for leaves
        let mut leaf_interp = vec![None; nn];
        let mut wbuf = vec![0.0; rank];
        for t in 0..nn {
            if !self.nodes[t].is_leaf() {
                continue;
            }
            let tgt: Vec<Point2> = self.perm[self.nodes[t].start..self.nodes[t].end]
                .iter()
                .map(|&k| pts[k])
                .collect();
            // interpolation weights of the leaf's own points
            let (cx, cy, h) = (self.nodes[t].center.x, self.nodes[t].center.y, self.nodes[t].half);
            let offset = self.arena.len();
            for p in &tgt {
                self.basis.weights_2d((p.x - cx) / h, (p.y - cy) / h, &mut wbuf);
                self.arena.extend_from_slice(&wbuf);
            }
            leaf_interp[t] = Some(Block {
                offset,
                rows: tgt.len(),
                cols: rank,
            });

            let mut stack: Vec<usize> = near[t].iter().rev().copied().collect();
            let kernel = self.kernel;
            while let Some(d) = stack.pop() {
                if self.nodes[d].is_leaf() {
                    let src: Vec<Point2> = self.perm[self.nodes[d].start..self.nodes[d].end]
                        .iter()
                        .map(|&k| pts[k])
                        .collect();
                    let blk = self.push_block(tgt.len(), src.len(), |r, c| kernel.between(tgt[r], src[c]));
                    lists[t].u.push((d, blk));
                    continue;
                }
                // same-level or finer non-leaf touching box: inspect its children
                let children = self.nodes[d].children.clone();
                for &e in children.iter().rev() {
                    if touches(&self.nodes[t], &self.nodes[e]) {
                        stack.push(e);
                    } else {
                        let src_nodes = self.node_coords(e);
                        let blk = self.push_block(tgt.len(), rank, |r, c| kernel.between(tgt[r], src_nodes[c]));
                        lists[t].w.push((e, blk));
                    }
                }
            }
        }
        self.lists = lists;
        self.leaf_interp = leaf_interp;
    }

    fn node_coords(&self, id: usize) -> Vec<Point2> {
        let n = &self.nodes[id];
        self.basis
            .box_nodes(n.center.x, n.center.y, n.half)
            .into_iter()
            .map(|(x, y)| Point2::new(x, y))
            .collect()
    }

    /// `rank x rank` kernel matrix between the nodes of a target box at the
    /// origin and a source box offset by `(dx, dy)` box widths.
    fn m2l_operator(&self, half: f64, dx: i64, dy: i64) -> Vec<f64> {
        let tgt = self.basis.box_nodes(0.0, 0.0, half);
        let src = self
            .basis
            .box_nodes(2.0 * half * dx as f64, 2.0 * half * dy as f64, half);
        let r = tgt.len();
        let mut out = vec![0.0; r * r];
        for (a, t) in tgt.iter().enumerate() {
            for (b, s) in src.iter().enumerate() {
                out[a * r + b] = self.kernel.pair_value((t.0 - s.0).hypot(t.1 - s.1));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn config(&self) -> &FmmConfig {
        &self.config
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn stats(&self) -> TreeStats {
        let mut s = TreeStats {
            nodes: self.nodes.len(),
            leaves: 0,
            depth: 0,
            m2l_pairs: 0,
            near_pairs: 0,
            w_pairs: 0,
            x_pairs: 0,
            operator_bytes: 8 * (self.arena.len() + self.m2l.iter().map(Vec::len).sum::<usize>() + 4 * self.basis.rank().pow(2)),
        };
        for (node, l) in self.nodes.iter().zip(&self.lists) {
            s.leaves += usize::from(node.is_leaf());
            s.depth = s.depth.max(node.level);
            s.m2l_pairs += l.v.len();
            s.near_pairs += l.u.len();
            s.w_pairs += l.w.len();
            s.x_pairs += l.x.len();
        }
        s
    }

    /// `u_i = sum_j K(x_i, x_j) v_j`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let m = self.len();
        if v.len() != m {
            return Err(Error::dim("fmm matvec charge vector", m, v.len()));
        }
        let rank = self.basis.rank();
        let nn = self.nodes.len();
        let q: Vec<f64> = self.perm.iter().map(|&k| v[k]).collect();
        let mut mult = vec![0.0; nn * rank];
        let mut local = vec![0.0; nn * rank];
        let mut out_perm = vec![0.0; m];

        // upward pass: leaves anterpolate, parents gather (reverse BFS order)
        for id in (0..nn).rev() {
            let node = &self.nodes[id];
            if let Some(blk) = self.leaf_interp[id] {
                let dst = &mut mult[id * rank..(id + 1) * rank];
                gemv_t_acc(self.block(blk), blk.rows, blk.cols, &q[node.start..node.end], dst);
            }
            if let Some(parent) = node.parent {
                let (lo, hi) = mult.split_at_mut(id * rank);
                let child = &hi[..rank];
                let dst = &mut lo[parent * rank..(parent + 1) * rank];
                gemv_acc(&self.m2m[node.quadrant], rank, rank, child, dst);
            }
        }

        // far field into local expansions
        for (id, l) in self.lists.iter().enumerate() {
            let dst = &mut local[id * rank..(id + 1) * rank];
            for &(s, op) in &l.v {
                gemv_acc(&self.m2l[op], rank, rank, &mult[s * rank..(s + 1) * rank], dst);
            }
            for &(s, blk) in &l.x {
                let src = &self.nodes[s];
                gemv_acc(self.block(blk), blk.rows, blk.cols, &q[src.start..src.end], dst);
            }
        }

        // downward pass: parent locals to children (BFS order)
        for id in 1..nn {
            let node = &self.nodes[id];
            let parent = node.parent.expect("non-root has a parent");
            let (lo, hi) = local.split_at_mut(id * rank);
            let src = &lo[parent * rank..(parent + 1) * rank];
            gemv_t_acc(&self.m2m[node.quadrant], rank, rank, src, &mut hi[..rank]);
        }

        // leaves: evaluate locals, W list and near field
        for id in 0..nn {
            let Some(blk) = self.leaf_interp[id] else { continue };
            let node = &self.nodes[id];
            let dst = &mut out_perm[node.start..node.end];
            gemv_acc(self.block(blk), blk.rows, blk.cols, &local[id * rank..(id + 1) * rank], dst);
            let l = &self.lists[id];
            for &(s, b) in &l.w {
                gemv_acc(self.block(b), b.rows, b.cols, &mult[s * rank..(s + 1) * rank], dst);
            }
            for &(s, b) in &l.u {
                let src = &self.nodes[s];
                gemv_acc(self.block(b), b.rows, b.cols, &q[src.start..src.end], dst);
            }
        }

        let mut out = vec![0.0; m];
        for (k, &orig) in self.perm.iter().enumerate() {
            out[orig] = out_perm[k];
        }
        Ok(out)
    }

    /// Column-wise [`FmmTree::matvec`]; columns are processed in parallel and
    /// each column's result is independent of scheduling.
    pub fn matmat(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if v.nrows() != self.len() {
            return Err(Error::dim("fmm matmat rows", self.len(), v.nrows()));
        }
        let cols: Vec<Vec<f64>> = (0..v.ncols())
            .into_par_iter()
            .map(|j| self.matvec(v.column(j).as_slice()))
            .collect::<Result<_>>()?;
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for (j, c) in cols.iter().enumerate() {
            out.column_mut(j).copy_from_slice(c);
        }
        Ok(out)
    }

    fn block(&self, b: Block) -> &[f64] {
        &self.arena[b.offset..b.offset + b.rows * b.cols]
    }

    /// Number of interactions covering each (target, source) pair, in original
    /// point indices. Every entry must be exactly 1.
    #[cfg(test)]
    fn pair_coverage(&self) -> DMatrix<u32> {
        let m = self.len();
        let mut cov = DMatrix::zeros(m, m);
        let pts_of = |id: usize| -> Vec<usize> {
            let n = &self.nodes[id];
            self.perm[n.start..n.end].to_vec()
        };
        // a local expansion at `id` reaches every leaf point below it
        for (id, l) in self.lists.iter().enumerate() {
            let targets = pts_of(id);
            for &(s, _) in &l.v {
                for &i in &targets {
                    for &j in &pts_of(s) {
                        cov[(i, j)] += 1;
                    }
                }
            }
            for &(s, _) in &l.x {
                for &i in &targets {
                    for &j in &pts_of(s) {
                        cov[(i, j)] += 1;
                    }
                }
            }
            for &(s, _) in l.w.iter().chain(&l.u) {
                for &i in &targets {
                    for &j in &pts_of(s) {
                        cov[(i, j)] += 1;
                    }
                }
            }
        }
        cov
    }
}

/// `y += A x` for row-major `A` (rows x cols).
#[inline]
fn gemv_acc(a: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(y.len(), rows);
    for (r, yr) in y.iter_mut().enumerate() {
        let row = &a[r * cols..(r + 1) * cols];
        let mut s = 0.0;
        for (aij, xj) in row.iter().zip(x) {
            s += aij * xj;
        }
        *yr += s;
    }
}

/// `y += Aᵀ x` for row-major `A` (rows x cols).
#[inline]
fn gemv_t_acc(a: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(x.len(), rows);
    debug_assert_eq!(y.len(), cols);
    for (r, &xr) in x.iter().enumerate() {
        if xr == 0.0 {
            continue;
        }
        let row = &a[r * cols..(r + 1) * cols];
        for (yj, aij) in y.iter_mut().zip(row) {
            *yj += aij * xr;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::dense_gram;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn uniform(m: usize, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointSet::new((0..m).map(|_| Point2::new(rng.random(), rng.random())).collect()).unwrap()
    }

    fn clustered(m: usize, seed: u64) -> PointSet {
        // strongly non-uniform: dense cluster plus sparse background
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..m)
            .map(|k| {
                if k % 5 == 0 {
                    Point2::new(rng.random(), rng.random())
                } else {
                    let x: f64 = rng.sample(StandardNormal);
                    let y: f64 = rng.sample(StandardNormal);
                    Point2::new(0.2 + 0.01 * x, 0.7 + 0.01 * y)
                }
            })
            .collect();
        PointSet::new(pts).unwrap()
    }

    fn charges(m: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den
    }

    fn dense_matvec(k: &KernelSpec, ps: &PointSet, v: &[f64]) -> Vec<f64> {
        let g = dense_gram(k, ps.points());
        (&g * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec()
    }

    #[test]
    fn single_point_tree() {
        let ps = PointSet::new(vec![Point2::new(0.3, 0.4)]).unwrap();
        let t = FmmTree::build(&ps, KernelSpec::gaussian(2.0, 1.0), FmmConfig::default()).unwrap();
        let s = t.stats();
        assert_eq!((s.nodes, s.leaves, s.m2l_pairs), (1, 1, 0));
        assert_eq!(t.matvec(&[1.5]).unwrap(), vec![3.0]);
    }

    #[test]
    fn corner_points_are_all_near_field() {
        let ps = PointSet::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 1.0),
        ])
        .unwrap();
        let t = FmmTree::build(&ps, KernelSpec::gaussian(1.0, 1.0), FmmConfig::new(4, 1)).unwrap();
        let s = t.stats();
        assert_eq!(s.depth, 1);
        assert_eq!(s.leaves, 4);
        assert_eq!(s.m2l_pairs + s.w_pairs + s.x_pairs, 0);
        assert_eq!(s.near_pairs, 16);
    }

    #[test]
    fn coincident_points_cap_depth() {
        let ps = PointSet::new(vec![Point2::new(2.0, -1.0); 10]).unwrap();
        let k = KernelSpec::gaussian(1.0, 1.0);
        let t = FmmTree::build(&ps, k, FmmConfig::new(3, 1)).unwrap();
        assert_eq!(t.stats().depth, MAX_DEPTH);
        let u = t.matvec(&[1.0; 10]).unwrap();
        assert!(u.iter().all(|&x| (x - 10.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_input() {
        let ps = uniform(10, 1);
        let k = KernelSpec::gaussian(1.0, 1.0);
        assert!(FmmTree::build(&ps, k, FmmConfig::new(1, 4)).is_err());
        assert!(FmmTree::build(&ps, k, FmmConfig::new(13, 4)).is_err());
        assert!(FmmTree::build(&ps, k, FmmConfig::new(5, 0)).is_err());
        let t = FmmTree::build(&ps, k, FmmConfig::new(5, 4)).unwrap();
        assert!(matches!(t.matvec(&[0.0; 9]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn coverage_is_exact_uniform_and_clustered() {
        for (ps, leaf) in [(uniform(300, 2), 4), (clustered(400, 3), 3), (uniform(257, 4), 1)] {
            let t = FmmTree::build(&ps, KernelSpec::gaussian(1.0, 0.5), FmmConfig::new(3, leaf)).unwrap();
            let s = t.stats();
            assert!(s.m2l_pairs > 0);
            let cov = t.pair_coverage();
            assert!(cov.iter().all(|&c| c == 1), "pair covered {} to {} times", cov.min(), cov.max());
        }
    }

    #[test]
    fn clustered_tree_uses_w_and_x_lists() {
        let t = FmmTree::build(&clustered(2000, 9), KernelSpec::gaussian(1.0, 0.5), FmmConfig::new(4, 8)).unwrap();
        let s = t.stats();
        assert!(s.w_pairs > 0 && s.x_pairs > 0, "{s:?}");
        assert_eq!(s.w_pairs, s.x_pairs);
    }

    #[test]
    fn zero_charges_give_zero() {
        let ps = uniform(500, 5);
        let t = FmmTree::build(&ps, KernelSpec::gaussian(1.0, 0.3), FmmConfig::new(5, 16)).unwrap();
        assert!(t.matvec(&vec![0.0; 500]).unwrap().iter().all(|&x| x == 0.0));
        let z = t.matmat(&DMatrix::zeros(500, 2)).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_leaf_is_exact() {
        let ps = uniform(512, 6);
        let v = charges(512, 7);
        let k = KernelSpec::powered_exponential(1.0, 0.3, 1.5);
        let t = FmmTree::build(&ps, k, FmmConfig::new(5, 512)).unwrap();
        let e = rel_err(&t.matvec(&v).unwrap(), &dense_matvec(&k, &ps, &v));
        assert!(e <= 1e-12, "{e}");
    }

    #[test]
    fn matches_dense_on_small_sets_for_all_kernels() {
        let ps = uniform(256, 8);
        let v = charges(256, 9);
        for k in [
            KernelSpec::gaussian(1.0, 0.5),
            KernelSpec::exponential(2.0, 0.5),
            KernelSpec::powered_exponential(1.0, 0.4, 1.5),
            KernelSpec::logarithm(-1.0),
        ] {
            let t = FmmTree::build(&ps, k, FmmConfig::new(8, 8)).unwrap();
            let e = rel_err(&t.matvec(&v).unwrap(), &dense_matvec(&k, &ps, &v));
            assert!(e <= 1e-6, "{:?}: {e}", k.family);
        }
    }

    #[test]
    fn accuracy_improves_with_more_nodes() {
        let k = KernelSpec::gaussian(1.0, 0.5);
        for seed in 0..3 {
            let ps = uniform(1500, 100 + seed);
            let v = charges(1500, 200 + seed);
            let dense = dense_matvec(&k, &ps, &v);
            let errs: Vec<f64> = (3..=7)
                .map(|n| {
                    let t = FmmTree::build(&ps, k, FmmConfig::new(n, 16)).unwrap();
                    rel_err(&t.matvec(&v).unwrap(), &dense)
                })
                .collect();
            for w in errs.windows(2) {
                assert!(w[1] <= w[0], "seed {seed}: {errs:?}");
            }
        }
    }

    #[test]
    fn matmat_matches_matvec_columns() {
        let ps = uniform(400, 10);
        let k = KernelSpec::exponential(1.0, 0.2);
        let t = FmmTree::build(&ps, k, FmmConfig::new(5, 16)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = DMatrix::from_fn(400, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = t.matmat(&v).unwrap();
        for j in 0..3 {
            assert_eq!(u.column(j).as_slice(), t.matvec(v.column(j).as_slice()).unwrap().as_slice());
        }
    }

    #[test]
    fn linearity() {
        let ps = uniform(800, 12);
        let k = KernelSpec::gaussian(1.0, 0.3);
        let t = FmmTree::build(&ps, k, FmmConfig::new(5, 16)).unwrap();
        let (v, w) = (charges(800, 13), charges(800, 14));
        let (a, b) = (1.7, -0.4);
        let comb: Vec<f64> = v.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
        let lhs = t.matvec(&comb).unwrap();
        let (tv, tw) = (t.matvec(&v).unwrap(), t.matvec(&w).unwrap());
        let rhs: Vec<f64> = tv.iter().zip(&tw).map(|(x, y)| a * x + b * y).collect();
        assert!(rel_err(&lhs, &rhs) <= 1e-12);
    }
}
