//! Ollivier curvature on graph edges and a volume-normalized curvature flow.
//!
//! For an edge `(i, j)`, `kappa = 1 - W1(mu_i, mu_j) / d(i, j)` where `mu_v`
//! keeps mass `idleness` at `v` and spreads the rest over `v`'s neighbours in
//! proportion to edge weight. Ground distances are shortest paths with the
//! current edge weights as lengths. W1 is solved exactly by
//! [`exact_ot_small`], which limits each measure to 8 support points; the
//! [`SupportPolicy::Truncate`] approximation keeps the edge partner plus the
//! heaviest remaining neighbours when a node has more.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::Array2;

use crate::error::{Result, SosmError};
use crate::graph::NeighborGraph;
use crate::transport::{exact_ot_small, TransportProblem, EXACT_MAX_SIDE};

/// How to treat neighbourhoods too large for the exact W1 solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SupportPolicy {
    /// Fail with a size error.
    #[default]
    Exact,
    /// Keep the edge partner and the heaviest other neighbours, renormalized.
    Truncate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OllivierConfig {
    pub idleness: f64,
    pub support: SupportPolicy,
}

impl Default for OllivierConfig {
    fn default() -> Self {
        OllivierConfig { idleness: 0.5, support: SupportPolicy::Exact }
    }
}

/// One curvature per graph edge, in the graph's edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCurvatures {
    pub values: Vec<f64>,
    pub idleness: f64,
}

impl EdgeCurvatures {
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        self.values.iter().map(|k| (k - m) * (k - m)).sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Queued(f64, usize);

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(graph: &NeighborGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.node_count()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Queued(0.0, source));
    while let Some(Queued(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(u, w) in graph.neighbors(v) {
            let nd = d + w;
            if nd < dist[u] {
                dist[u] = nd;
                heap.push(Queued(nd, u));
            }
        }
    }
    dist
}

/// Shortest-path distances computed on demand, one Dijkstra per source.
struct Distances<'g> {
    graph: &'g NeighborGraph,
    rows: Vec<Option<Vec<f64>>>,
}

impl<'g> Distances<'g> {
    fn new(graph: &'g NeighborGraph) -> Self {
        Distances { graph, rows: vec![None; graph.node_count()] }
    }

    fn get(&mut self, a: usize, b: usize) -> f64 {
        if let Some(row) = &self.rows[b] {
            return row[a];
        }
        let graph = self.graph;
        self.rows[a].get_or_insert_with(|| dijkstra(graph, a))[b]
    }
}

/// Support and masses of the lazy random-walk measure at `v` for edge `(v, partner)`.
fn walk_measure(
    graph: &NeighborGraph,
    v: usize,
    partner: usize,
    cfg: &OllivierConfig,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut neighbors: Vec<(usize, f64)> = graph.neighbors(v).to_vec();
    let own = usize::from(cfg.idleness > 0.0);
    if neighbors.len() + own > EXACT_MAX_SIDE {
        match cfg.support {
            SupportPolicy::Exact => {
                return Err(SosmError::Size(format!(
                    "node {v} has {} neighbours; exact W1 supports at most {} support points \
                     (enable the truncated-support approximation)",
                    neighbors.len(),
                    EXACT_MAX_SIDE
                )))
            }
            SupportPolicy::Truncate => {
                neighbors.sort_by(|a, b| {
                    (b.0 == partner).cmp(&(a.0 == partner)).then(b.1.total_cmp(&a.1)).then(a.0.cmp(&b.0))
                });
                neighbors.truncate(EXACT_MAX_SIDE - own);
                neighbors.sort_by_key(|&(u, _)| u);
            }
        }
    }
    let total: f64 = neighbors.iter().map(|&(_, w)| w).sum();
    let mut nodes = Vec::with_capacity(neighbors.len() + 1);
    let mut mass = Vec::with_capacity(neighbors.len() + 1);
    if own == 1 {
        nodes.push(v);
        mass.push(cfg.idleness);
    }
    for (u, w) in neighbors {
        nodes.push(u);
        mass.push((1.0 - cfg.idleness) * w / total);
    }
    // absorb rounding so the measure passes the marginal check
    let s: f64 = mass.iter().sum();
    let last = mass.len() - 1;
    mass[last] += 1.0 - s;
    Ok((nodes, mass))
}

fn check_idleness(idleness: f64) -> Result<()> {
    if (0.0..1.0).contains(&idleness) {
        Ok(())
    } else {
        Err(SosmError::Parameter(format!("idleness must lie in [0, 1), got {idleness}")))
    }
}

fn curvature_with_distances(
    graph: &NeighborGraph,
    i: usize,
    j: usize,
    cfg: &OllivierConfig,
    dist: &mut Distances<'_>,
) -> Result<f64> {
    let (src, p) = walk_measure(graph, i, j, cfg)?;
    let (dst, q) = walk_measure(graph, j, i, cfg)?;
    let cost = Array2::from_shape_fn((src.len(), dst.len()), |(a, b)| dist.get(src[a], dst[b]));
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(SosmError::Degenerate(format!("neighbourhoods of edge ({i}, {j}) are disconnected")));
    }
    let w1 = exact_ot_small(&TransportProblem::new(p, q, cost)?)?.objective;
    Ok(1.0 - w1 / dist.get(i, j))
}

/// Ollivier curvature of one edge with exact W1.
pub fn ollivier_curvature(graph: &NeighborGraph, edge: (usize, usize), idleness: f64) -> Result<f64> {
    ollivier_curvature_with(graph, edge, &OllivierConfig { idleness, support: SupportPolicy::Exact })
}

pub fn ollivier_curvature_with(graph: &NeighborGraph, edge: (usize, usize), cfg: &OllivierConfig) -> Result<f64> {
    check_idleness(cfg.idleness)?;
    let (i, j) = edge;
    if graph.weight(i, j).is_none() {
        return Err(SosmError::Parameter(format!("({i}, {j}) is not an edge")));
    }
    curvature_with_distances(graph, i, j, cfg, &mut Distances::new(graph))
}

/// Curvature of every edge, sharing shortest-path computations.
pub fn edge_curvatures(graph: &NeighborGraph, cfg: &OllivierConfig) -> Result<EdgeCurvatures> {
    check_idleness(cfg.idleness)?;
    let mut dist = Distances::new(graph);
    let values = graph
        .edges()
        .iter()
        .map(|e| curvature_with_distances(graph, e.i, e.j, cfg, &mut dist))
        .collect::<Result<Vec<_>>>()?;
    Ok(EdgeCurvatures { values, idleness: cfg.idleness })
}

/// `w_e <- w_e (1 - eta kappa_e)`, then a global rescale restoring the total weight.
pub fn flow_step(graph: &NeighborGraph, curvatures: &EdgeCurvatures, eta: f64) -> Result<NeighborGraph> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(SosmError::Parameter(format!("eta must be positive, got {eta}")));
    }
    if curvatures.values.len() != graph.edge_count() {
        return Err(SosmError::Size(format!(
            "{} curvatures for {} edges",
            curvatures.values.len(),
            graph.edge_count()
        )));
    }
    for (e, &k) in graph.edges().iter().zip(&curvatures.values) {
        let product = eta * k.abs();
        if !(product < 1.0) {
            return Err(SosmError::StepSize { i: e.i, j: e.j, product });
        }
    }
    let before = graph.total_weight();
    let mut weights: Vec<f64> =
        graph.edges().iter().zip(&curvatures.values).map(|(e, &k)| e.weight * (1.0 - eta * k)).collect();
    let after: f64 = weights.iter().sum();
    let scale = before / after;
    weights.iter_mut().for_each(|w| *w *= scale);
    graph.with_weights(&weights)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSnapshot {
    pub weights: Vec<f64>,
    pub curvatures: Vec<f64>,
    pub curvature_mean: f64,
    pub curvature_variance: f64,
    pub total_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    /// Snapshot 0 is the input graph; snapshot `k` follows `k` flow steps.
    pub snapshots: Vec<FlowSnapshot>,
    /// Curvature variance fell below [`VARIANCE_STOP`] before `iters` steps.
    pub stopped_early: bool,
    pub final_graph: NeighborGraph,
}

impl FlowTrace {
    pub fn initial(&self) -> &FlowSnapshot {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &FlowSnapshot {
        self.snapshots.last().expect("trace always has the initial snapshot")
    }

    /// Largest relative deviation of total weight from the initial total.
    pub fn total_weight_drift(&self) -> f64 {
        let t0 = self.initial().total_weight;
        self.snapshots.iter().map(|s| ((s.total_weight - t0) / t0).abs()).fold(0.0, f64::max)
    }
}

pub const VARIANCE_STOP: f64 = 1e-10;

fn snapshot(graph: &NeighborGraph, k: &EdgeCurvatures) -> FlowSnapshot {
    FlowSnapshot {
        weights: graph.weights(),
        curvatures: k.values.clone(),
        curvature_mean: k.mean(),
        curvature_variance: k.variance(),
        total_weight: graph.total_weight(),
    }
}

/// Iterates [`flow_step`] with curvature recomputation, exact W1.
pub fn run_flow(graph: &NeighborGraph, idleness: f64, eta: f64, iters: usize) -> Result<FlowTrace> {
    run_flow_with(graph, &OllivierConfig { idleness, support: SupportPolicy::Exact }, eta, iters)
}

pub fn run_flow_with(graph: &NeighborGraph, cfg: &OllivierConfig, eta: f64, iters: usize) -> Result<FlowTrace> {
    let mut g = graph.clone();
    let mut k = edge_curvatures(&g, cfg)?;
    let mut snapshots = vec![snapshot(&g, &k)];
    let mut stopped_early = false;
    for _ in 0..iters {
        if k.variance() < VARIANCE_STOP {
            stopped_early = true;
            break;
        }
        g = flow_step(&g, &k, eta)?;
        k = edge_curvatures(&g, cfg)?;
        snapshots.push(snapshot(&g, &k));
    }
    Ok(FlowTrace { snapshots, stopped_early, final_graph: g })
}

/// Cycle graph on `n` nodes with unit weights.
pub fn cycle_graph(n: usize) -> Result<NeighborGraph> {
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
    NeighborGraph::from_edges(n, &edges)
}

/// Two unit-weight triangles `{0,1,2}` and `{3,4,5}` joined by the path
/// `2 - 6 - ... - 3` with `bridge` interior nodes.
pub fn barbell_graph(bridge: usize) -> Result<NeighborGraph> {
    let mut edges = vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0)];
    let mut prev = 2;
    for b in 0..bridge {
        edges.push((prev, 6 + b, 1.0));
        prev = 6 + b;
    }
    edges.push((prev, 3, 1.0));
    NeighborGraph::from_edges(6 + bridge, &edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_curvatures() {
        let g = NeighborGraph::from_edges(2, &[(0, 1, 1.0)]).unwrap();
        assert!((ollivier_curvature(&g, (0, 1), 0.5).unwrap() - 1.0).abs() < 1e-14);
        assert!(ollivier_curvature(&g, (0, 1), 0.0).unwrap().abs() < 1e-14);
    }

    #[test]
    fn four_cycle_edges_agree() {
        let g = cycle_graph(4).unwrap();
        let k = edge_curvatures(&g, &OllivierConfig { idleness: 0.0, support: SupportPolicy::Exact }).unwrap();
        assert_eq!(k.values.len(), 4);
        for v in &k.values {
            assert!((v - k.values[0]).abs() < 1e-14);
            assert!(*v <= 1.0);
        }
    }

    #[test]
    fn missing_edge_and_bad_idleness() {
        let g = cycle_graph(4).unwrap();
        assert!(ollivier_curvature(&g, (0, 2), 0.5).is_err());
        assert!(ollivier_curvature(&g, (0, 1), 1.0).is_err());
    }

    #[test]
    fn large_neighbourhood_needs_truncation() {
        let edges: Vec<_> = (1..=9).map(|v| (0, v, 1.0)).collect();
        let star = NeighborGraph::from_edges(10, &edges).unwrap();
        assert!(matches!(ollivier_curvature(&star, (0, 1), 0.5), Err(SosmError::Size(_))));
        let cfg = OllivierConfig { idleness: 0.5, support: SupportPolicy::Truncate };
        let k = ollivier_curvature_with(&star, (0, 1), &cfg).unwrap();
        assert!(k.is_finite() && k <= 1.0);
    }

    #[test]
    fn zero_curvature_leaves_graph_unchanged() {
        let g = barbell_graph(1).unwrap();
        let zero = EdgeCurvatures { values: vec![0.0; g.edge_count()], idleness: 0.5 };
        assert_eq!(flow_step(&g, &zero, 0.3).unwrap(), g);
    }

    #[test]
    fn single_edge_renormalizes_back() {
        let g = NeighborGraph::from_edges(2, &[(0, 1, 2.5)]).unwrap();
        let k = EdgeCurvatures { values: vec![1.0], idleness: 0.5 };
        let next = flow_step(&g, &k, 0.1).unwrap();
        assert!((next.weight(0, 1).unwrap() - 2.5).abs() < 1e-14);
    }

    #[test]
    fn step_too_large_names_edge() {
        let g = barbell_graph(1).unwrap();
        let mut vals = vec![0.1; g.edge_count()];
        vals[3] = -25.0;
        let k = EdgeCurvatures { values: vals, idleness: 0.5 };
        let e = g.edges()[3];
        match flow_step(&g, &k, 0.05).unwrap_err() {
            SosmError::StepSize { i, j, .. } => assert_eq!((i, j), (e.i, e.j)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_iterations_keep_initial_snapshot() {
        let trace = run_flow(&barbell_graph(1).unwrap(), 0.5, 0.05, 0).unwrap();
        assert_eq!(trace.snapshots.len(), 1);
        assert!(!trace.stopped_early);
    }

    #[test]
    fn cycle_is_a_fixed_point() {
        let g = cycle_graph(7).unwrap();
        let k = edge_curvatures(&g, &OllivierConfig::default()).unwrap();
        assert!(k.variance() < 1e-28);
        let next = flow_step(&g, &k, 0.1).unwrap();
        for (a, b) in next.weights().iter().zip(g.weights()) {
            assert!((a - b).abs() < 1e-14);
        }
        let trace = run_flow(&g, 0.5, 0.05, 5).unwrap();
        assert!(trace.snapshots.iter().all(|s| s.curvature_variance < 1e-28));
    }

    #[test]
    fn barbell_variance_does_not_grow() {
        let g = barbell_graph(1).unwrap();
        let trace = run_flow(&g, 0.5, 0.05, 20).unwrap();
        assert!(trace.last().curvature_variance <= trace.initial().curvature_variance);
        let long = run_flow(&g, 0.5, 0.05, 100).unwrap();
        assert!(long.total_weight_drift() <= 1e-10);
    }

    #[test]
    fn curvature_is_relabel_equivariant() {
        let g = barbell_graph(1).unwrap();
        let perm = [4, 6, 0, 2, 5, 1, 3];
        let h = g.relabeled(&perm).unwrap();
        let cfg = OllivierConfig::default();
        let kg = edge_curvatures(&g, &cfg).unwrap();
        let kh = edge_curvatures(&h, &cfg).unwrap();
        for (e, k) in g.edges().iter().zip(&kg.values) {
            let idx = h.edge_index(perm[e.i], perm[e.j]).unwrap();
            assert!((kh.values[idx] - k).abs() < 1e-12);
        }
    }
}
