use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{HeteroGraph, MetaPath, Orientation};
use crate::error::{Error, Result};

/// Homogeneous graph over a meta-path's endpoint type: `u -> w` iff some
/// complete walk of the meta-path starts at `u` and ends at `w != u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticSubgraph {
    pub metapath: MetaPath,
    pub node_type: usize,
    adjacency: Vec<Vec<usize>>,
}

impl SemanticSubgraph {
    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn is_isolated(&self, u: usize) -> bool {
        self.adjacency[u].is_empty()
    }

    /// Directed pairs `(u, w)`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().map(move |&w| (u, w)))
            .collect()
    }

    /// Neighborhood used by attention: the walk neighbors, or `[u]` for an
    /// isolated node so the softmax is defined.
    pub fn attention_neighbors(&self, u: usize) -> Vec<usize> {
        if self.adjacency[u].is_empty() {
            vec![u]
        } else {
            self.adjacency[u].clone()
        }
    }

    /// Builds a subgraph directly from an adjacency list (entries must be in range).
    pub fn from_adjacency(metapath: MetaPath, node_type: usize, mut adjacency: Vec<Vec<usize>>) -> Self {
        for (u, ns) in adjacency.iter_mut().enumerate() {
            ns.sort_unstable();
            ns.dedup();
            ns.retain(|&w| w != u);
        }
        Self {
            metapath,
            node_type,
            adjacency,
        }
    }
}

/// Per-step typed adjacency: for each node of `node_types[i]`, its neighbors in `node_types[i+1]`.
fn step_adjacency(graph: &HeteroGraph, m: &MetaPath, step: usize) -> Result<Vec<Vec<usize>>> {
    let from = m.node_types[step];
    let to = m.node_types[step + 1];
    let rel = m.relations[step];
    let orient = graph.schema().orientation(rel, from, to)?;
    let mut adj = vec![Vec::new(); graph.num_nodes(from)];
    for e in graph.edges(rel) {
        match orient {
            Orientation::Forward => adj[e.src.idx].push(e.dst.idx),
            Orientation::Backward => adj[e.dst.idx].push(e.src.idx),
            Orientation::Both => {
                adj[e.src.idx].push(e.dst.idx);
                adj[e.dst.idx].push(e.src.idx);
            }
        }
    }
    for ns in &mut adj {
        ns.sort_unstable();
        ns.dedup();
    }
    Ok(adj)
}

/// Exhaustive extraction: layered reachability from every start node.
pub fn extract_semantic_subgraph(graph: &HeteroGraph, m: &MetaPath) -> Result<SemanticSubgraph> {
    graph.schema().check_metapath(m)?;
    if m.start_type() != m.end_type() {
        return Err(Error::Schema(format!(
            "meta-path `{}` must start and end at the same node type",
            m.name
        )));
    }
    let ty = m.start_type();
    let n = graph.num_nodes(ty);
    let steps = (0..m.relations.len())
        .map(|i| step_adjacency(graph, m, i))
        .collect::<Result<Vec<_>>>()?;

    let mut adjacency = vec![Vec::new(); n];
    let mut marks: Vec<Vec<usize>> = m
        .node_types
        .iter()
        .map(|&t| vec![usize::MAX; graph.num_nodes(t)])
        .collect();
    for (u, out) in adjacency.iter_mut().enumerate() {
        let mut frontier = vec![u];
        for (i, adj) in steps.iter().enumerate() {
            let mut next = Vec::new();
            for &x in &frontier {
                for &y in &adj[x] {
                    if marks[i + 1][y] != u {
                        marks[i + 1][y] = u;
                        next.push(y);
                    }
                }
            }
            frontier = next;
        }
        if steps.is_empty() {
            frontier.clear();
        }
        frontier.retain(|&w| w != u);
        frontier.sort_unstable();
        *out = frontier;
    }
    Ok(SemanticSubgraph {
        metapath: m.clone(),
        node_type: ty,
        adjacency,
    })
}

/// Enumerates every walk of `m` explicitly and returns the distinct endpoint
/// pairs `(start, end)` with `start != end`. Exponential; for small graphs.
pub fn enumerate_walk_pairs(graph: &HeteroGraph, m: &MetaPath) -> Result<BTreeSet<(usize, usize)>> {
    graph.schema().check_metapath(m)?;
    let steps = (0..m.relations.len())
        .map(|i| step_adjacency(graph, m, i))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = BTreeSet::new();
    fn walk(
        steps: &[Vec<Vec<usize>>],
        depth: usize,
        start: usize,
        at: usize,
        pairs: &mut BTreeSet<(usize, usize)>,
    ) {
        if depth == steps.len() {
            if at != start {
                pairs.insert((start, at));
            }
            return;
        }
        for &next in &steps[depth][at] {
            walk(steps, depth + 1, start, next, pairs);
        }
    }
    if !steps.is_empty() {
        for u in 0..graph.num_nodes(m.start_type()) {
            walk(&steps, 0, u, u, &mut pairs);
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, NodeRef, Schema};

    fn ab_graph(n_a: usize, n_b: usize, links: &[(usize, usize)]) -> HeteroGraph {
        let mut s = Schema::default();
        s.add_node_type("A").unwrap();
        s.add_node_type("B").unwrap();
        s.add_relation("r", "A", "B").unwrap();
        let ids = vec![
            (0..n_a).map(|i| format!("a{i}")).collect(),
            (0..n_b).map(|i| format!("b{i}")).collect(),
        ];
        let edges = vec![links
            .iter()
            .map(|&(a, b)| Edge { src: NodeRef::new(0, a), dst: NodeRef::new(1, b) })
            .collect()];
        HeteroGraph::new(s, ids, vec![None, None], edges).unwrap()
    }

    #[test]
    fn shared_neighbor_links_endpoints() {
        let g = ab_graph(3, 2, &[(0, 0), (1, 0), (2, 1)]);
        let m = g.schema().parse_metapath("ABA", &["A", "r", "B", "r", "A"]).unwrap();
        let sg = extract_semantic_subgraph(&g, &m).unwrap();
        assert_eq!(sg.edges(), vec![(0, 1), (1, 0)]);
        assert!(sg.is_isolated(2));
        assert_eq!(sg.attention_neighbors(2), vec![2]);
        let oracle = enumerate_walk_pairs(&g, &m).unwrap();
        assert_eq!(sg.edges().into_iter().collect::<BTreeSet<_>>(), oracle);
    }

    #[test]
    fn single_type_path_has_no_edges() {
        let g = ab_graph(3, 1, &[(0, 0)]);
        let m = g.schema().parse_metapath("A", &["A"]).unwrap();
        let sg = extract_semantic_subgraph(&g, &m).unwrap();
        assert_eq!(sg.num_nodes(), 3);
        assert_eq!(sg.num_edges(), 0);
    }

    #[test]
    fn star_gives_complete_graph() {
        let k = 6;
        let links: Vec<_> = (0..k).map(|a| (a, 0)).collect();
        let g = ab_graph(k, 1, &links);
        let m = g.schema().parse_metapath("ABA", &["A", "r", "B", "r", "A"]).unwrap();
        let sg = extract_semantic_subgraph(&g, &m).unwrap();
        let undirected: BTreeSet<_> = sg.edges().into_iter().filter(|(u, w)| u < w).collect();
        assert_eq!(undirected.len(), k * (k - 1) / 2);
        assert_eq!(enumerate_walk_pairs(&g, &m).unwrap().len(), k * (k - 1));
    }

    #[test]
    fn asymmetric_endpoints_are_rejected() {
        let g = ab_graph(2, 2, &[(0, 0)]);
        let m = g.schema().parse_metapath("AB", &["A", "r", "B"]).unwrap();
        assert!(matches!(extract_semantic_subgraph(&g, &m), Err(Error::Schema(_))));
    }

    #[test]
    fn unknown_relation_is_a_schema_error() {
        let g = ab_graph(2, 2, &[(0, 0)]);
        let m = MetaPath { name: "x".into(), node_types: vec![0, 1, 0], relations: vec![3, 0] };
        assert!(matches!(extract_semantic_subgraph(&g, &m), Err(Error::Schema(_))));
    }
}
