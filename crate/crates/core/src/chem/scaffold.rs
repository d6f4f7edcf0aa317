//! Bemis-Murcko frameworks.

use super::graph::MolGraph;

/// Ring systems plus the linkers between them. Non-ring atoms with at most
/// one remaining neighbor are pruned until nothing changes; acyclic
/// molecules give the empty graph.
pub fn scaffold(g: &MolGraph) -> MolGraph {
    let n = g.atom_count();
    let ring = g.ring_atoms();
    if !ring.iter().any(|&r| r) {
        return MolGraph::new();
    }
    let mut keep = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|i| g.degree(i)).collect();
    let mut queue: Vec<usize> = (0..n).filter(|&i| !ring[i] && degree[i] <= 1).collect();
    while let Some(v) = queue.pop() {
        if !keep[v] {
            continue;
        }
        keep[v] = false;
        for &(w, _) in g.neighbors(v) {
            if keep[w] {
                degree[w] -= 1;
                if !ring[w] && degree[w] <= 1 {
                    queue.push(w);
                }
            }
        }
    }
    g.subgraph(&keep)
}
