//! Builds a kNN graph over a small cohort and inspects both Laplacians.

use ndarray::array;
use sosm::graph::{build_knn_graph, graph_laplacian, LaplacianKind, Metric};
use sosm::Cohort;

fn main() -> sosm::Result<()> {
    let features = array![[0.0, 0.0], [1.0, 0.1], [2.1, 0.0], [3.0, 0.4], [4.2, 0.2], [5.0, 0.0]];
    let cohort = Cohort::from_features(features, None)?;
    let graph = build_knn_graph(&cohort, 2, Metric::Euclidean)?;
    println!("{} nodes, {} edges", graph.node_count(), graph.edge_count());
    for e in graph.edges() {
        println!("  {} -- {}  w = {:.4}", e.i, e.j, e.weight);
    }
    for kind in [LaplacianKind::Combinatorial, LaplacianKind::RandomWalk] {
        let lap = graph_laplacian(&graph, kind)?;
        println!("{kind} Laplacian:\n{:.3}", lap.values());
        let coords = lap.spectral_coordinates(1)?;
        println!("  first spectral coordinate: {:.3}", coords.column(0));
    }
    Ok(())
}
