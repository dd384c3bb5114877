//! Weighted kNN graphs over cohort samples and their Laplacians.
//!
//! The symmetrized kNN graph is the discrete stand-in for the sample manifold:
//! every operator that needs "the Laplacian" takes it from here.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::cohort::Cohort;
use crate::error::{Result, SosmError};
use crate::linalg;

/// Input-space distance used for neighbour selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
}

/// Undirected edge with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Symmetric weighted graph without self-loops.
///
/// Edges are kept in lexicographic `(i, j)` order; every per-edge vector in the
/// crate (curvatures, flow weights) uses that same order.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    n: usize,
    k: Option<usize>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl NeighborGraph {
    /// Builds a graph from an undirected edge list. Listing both `(i, j)` and
    /// `(j, i)` is allowed only when the weights agree.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(a, b, w) in edges {
            if a >= n || b >= n {
                return Err(SosmError::Parameter(format!("edge ({a}, {b}) out of range for {n} nodes")));
            }
            if a == b {
                return Err(SosmError::Parameter(format!("self-loop at node {a}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(SosmError::Parameter(format!(
                    "edge ({a}, {b}) weight must be finite and positive, got {w}"
                )));
            }
            let key = (a.min(b), a.max(b));
            if let Some(prev) = map.insert(key, w) {
                if prev != w {
                    return Err(SosmError::Parameter(format!(
                        "edge {key:?} listed twice with different weights ({prev} vs {w})"
                    )));
                }
            }
        }
        let edges: Vec<Edge> = map.into_iter().map(|((i, j), weight)| Edge { i, j, weight }).collect();
        Ok(Self::assemble(n, None, edges))
    }

    fn assemble(n: usize, k: Option<usize>, edges: Vec<Edge>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for e in &edges {
            adjacency[e.i].push((e.j, e.weight));
            adjacency[e.j].push((e.i, e.weight));
        }
        for row in &mut adjacency {
            row.sort_by_key(|&(j, _)| j);
        }
        NeighborGraph { n, k, edges, adjacency }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Neighbours-per-node used at construction, if the graph came from a kNN build.
    pub fn k(&self) -> Option<usize> {
        self.k
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Neighbours of `i` with edge weights, sorted by neighbour index.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.adjacency
            .get(i)?
            .binary_search_by_key(&j, |&(v, _)| v)
            .ok()
            .map(|pos| self.adjacency[i][pos].1)
    }

    /// Position of edge `{i, j}` in [`edges`](Self::edges).
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search_by(|e| (e.i, e.j).cmp(&key)).ok()
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.adjacency[i].iter().map(|&(_, w)| w).sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.weight).collect()
    }

    /// Same topology with new per-edge weights (edge order).
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.edges.len() {
            return Err(SosmError::Size(format!(
                "{} weights for {} edges",
                weights.len(),
                self.edges.len()
            )));
        }
        let mut edges = self.edges.clone();
        for (e, &w) in edges.iter_mut().zip(weights) {
            if !(w.is_finite() && w > 0.0) {
                return Err(SosmError::Parameter(format!(
                    "edge ({}, {}) weight must be finite and positive, got {w}",
                    e.i, e.j
                )));
            }
            e.weight = w;
        }
        Ok(Self::assemble(self.n, self.k, edges))
    }

    /// Relabels nodes: old node `v` becomes `perm[v]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(SosmError::Size("permutation length differs from node count".into()));
        }
        let edges: Vec<_> = self.edges.iter().map(|e| (perm[e.i], perm[e.j], e.weight)).collect();
        let mut g = Self::from_edges(self.n, &edges)?;
        g.k = self.k;
        Ok(g)
    }
}

/// Symmetrized kNN graph with Gaussian edge weights.
///
/// Each sample selects its `k` nearest samples (ties broken by index); an edge
/// is kept if either endpoint selected it. Weights are
/// `exp(-d^2 / (2 h^2))` with `h` the median over all selected neighbour distances.
pub fn build_knn_graph(cohort: &Cohort, k: usize, metric: Metric) -> Result<NeighborGraph> {
    let Metric::Euclidean = metric;
    let n = cohort.len();
    if k == 0 || k >= n {
        return Err(SosmError::Parameter(format!("k must satisfy 1 <= k < N, got k = {k}, N = {n}")));
    }
    let dist = pairwise_distances(cohort);

    let mut collisions = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if dist[[i, j]] == 0.0 {
                collisions.push(format!("{}/{}", cohort.ids()[i], cohort.ids()[j]));
            }
        }
    }
    if !collisions.is_empty() {
        return Err(SosmError::Degenerate(format!(
            "duplicate points give zero kNN bandwidth: {}",
            collisions.join(", ")
        )));
    }

    let mut selected: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut knn_dists = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist[[i, a]].total_cmp(&dist[[i, b]]).then(a.cmp(&b)));
        for &j in &order[..k] {
            knn_dists.push(dist[[i, j]]);
            selected.insert((i.min(j), i.max(j)), dist[[i, j]]);
        }
    }
    let bandwidth = linalg::median(&knn_dists);
    if !(bandwidth > 0.0) {
        return Err(SosmError::Degenerate("median kNN distance is zero".into()));
    }
    let two_h2 = 2.0 * bandwidth * bandwidth;
    let edges = selected
        .into_iter()
        .map(|((i, j), d)| Edge { i, j, weight: (-(d * d) / two_h2).exp().max(f64::MIN_POSITIVE) })
        .collect();
    Ok(NeighborGraph::assemble(n, Some(k), edges))
}

/// Dense Euclidean distance matrix; `d[i][j]` and `d[j][i]` are bitwise equal.
pub fn pairwise_distances(cohort: &Cohort) -> Array2<f64> {
    let x = cohort.features();
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = s.sqrt();
            d[[j, i]] = d[[i, j]];
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LaplacianKind {
    /// `D - A`.
    #[default]
    Combinatorial,
    /// `I - D^{-1} A`.
    RandomWalk,
}

impl std::str::FromStr for LaplacianKind {
    type Err = SosmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combinatorial" => Ok(Self::Combinatorial),
            "random-walk" | "random-walk-normalized" | "rw" => Ok(Self::RandomWalk),
            other => Err(SosmError::Parameter(format!("unknown laplacian kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for LaplacianKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Combinatorial => "combinatorial",
            Self::RandomWalk => "random-walk",
        })
    }
}

/// Dense graph Laplacian. Degrees are kept so that spectral routines can
/// recover the symmetric form of the random-walk operator.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix {
    values: Array2<f64>,
    kind: LaplacianKind,
    degrees: Vec<f64>,
}

impl LaplacianMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kind(&self) -> LaplacianKind {
        self.kind
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Builds a combinatorial Laplacian from a dense symmetric adjacency matrix.
    pub fn from_adjacency(adjacency: &Array2<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if adjacency.ncols() != n {
            return Err(SosmError::Size("adjacency must be square".into()));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = adjacency[[i, j]];
                if w != adjacency[[j, i]] {
                    return Err(SosmError::Parameter(format!("adjacency not symmetric at ({i}, {j})")));
                }
                if w != 0.0 {
                    edges.push((i, j, w));
                }
            }
        }
        graph_laplacian(&NeighborGraph::from_edges(n, &edges)?, LaplacianKind::Combinatorial)
    }

    /// Bottom `d` nontrivial eigenvectors, scaled so that each column has
    /// mean-square one. For the random-walk kind these are the right
    /// eigenvectors `D^{-1/2} u` of the symmetric normalized operator.
    pub fn spectral_coordinates(&self, d: usize) -> Result<Array2<f64>> {
        let n = self.dim();
        if d == 0 || d + 1 > n {
            return Err(SosmError::Parameter(format!(
                "need 1 <= d < N for spectral coordinates (d = {d}, N = {n})"
            )));
        }
        let (sym, scale) = match self.kind {
            LaplacianKind::Combinatorial => (self.values.clone(), None),
            LaplacianKind::RandomWalk => {
                let sqrt_deg: Vec<f64> = self.degrees.iter().map(|d| d.sqrt()).collect();
                let mut s = self.values.clone();
                for i in 0..n {
                    for j in 0..n {
                        s[[i, j]] *= sqrt_deg[i] / sqrt_deg[j];
                    }
                }
                // symmetric up to rounding; enforce it exactly
                let s = (&s + &s.t()) * 0.5;
                (s, Some(sqrt_deg))
            }
        };
        let (_, vecs) = linalg::symmetric_eigen(&sym);
        let mut out = Array2::zeros((n, d));
        for c in 0..d {
            let mut col: Vec<f64> = (0..n).map(|r| vecs[[r, c + 1]]).collect();
            if let Some(sq) = &scale {
                for (v, s) in col.iter_mut().zip(sq) {
                    *v /= s;
                }
            }
            linalg::fix_sign(&mut col);
            let rms = (col.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            for (r, v) in col.iter().enumerate() {
                out[[r, c]] = v / rms;
            }
        }
        Ok(out)
    }
}

/// Assembles the requested Laplacian of `graph`.
pub fn graph_laplacian(graph: &NeighborGraph, kind: LaplacianKind) -> Result<LaplacianMatrix> {
    let n = graph.node_count();
    let degrees: Vec<f64> = (0..n).map(|i| graph.degree(i)).collect();
    let mut values = Array2::zeros((n, n));
    match kind {
        LaplacianKind::Combinatorial => {
            for i in 0..n {
                values[[i, i]] = degrees[i];
                for &(j, w) in graph.neighbors(i) {
                    values[[i, j]] = -w;
                }
            }
        }
        LaplacianKind::RandomWalk => {
            for i in 0..n {
                if degrees[i] == 0.0 {
                    return Err(SosmError::Degenerate(format!(
                        "node {i} is isolated; random-walk Laplacian divides by its zero degree"
                    )));
                }
                values[[i, i]] = 1.0;
                let mut off = 0.0;
                for &(j, w) in graph.neighbors(i) {
                    let v = w / degrees[i];
                    values[[i, j]] = -v;
                    off += v;
                }
                // exact zero row sum despite rounding in w / deg
                values[[i, i]] = off;
            }
        }
    }
    Ok(LaplacianMatrix { values, kind, degrees })
}
