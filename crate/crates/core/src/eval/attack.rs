//! Structural re-identification: per-node (type, degree, 4-cycle count)
//! signatures, signature matching between two graphs, and graph
//! reconstruction from latent scores.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{AttackMode, Reconstruction};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Signature {
    pub node_type: usize,
    pub degree: usize,
    pub quadrilaterals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureTable {
    /// Indexed by global node position.
    pub signatures: Vec<Signature>,
    pub unique: Vec<bool>,
}

/// 4-cycles through each node of a simple undirected graph: for every node
/// `w` at distance two, each pair of common neighbors closes one cycle.
pub fn quadrilateral_counts(adj: &[Vec<usize>]) -> Vec<u64> {
    let n = adj.len();
    let mut common = vec![0u64; n];
    let mut touched = Vec::new();
    (0..n)
        .map(|u| {
            for &a in &adj[u] {
                for &w in &adj[a] {
                    if w != u {
                        if common[w] == 0 {
                            touched.push(w);
                        }
                        common[w] += 1;
                    }
                }
            }
            let mut total = 0;
            for &w in &touched {
                let c = common[w];
                total += c * (c.saturating_sub(1)) / 2;
                common[w] = 0;
            }
            touched.clear();
            total
        })
        .collect()
}

fn mark_unique(signatures: &[Signature]) -> Vec<bool> {
    let mut counts: HashMap<Signature, usize> = HashMap::new();
    for s in signatures {
        *counts.entry(*s).or_default() += 1;
    }
    signatures.iter().map(|s| counts[s] == 1).collect()
}

/// Exact signatures over the undirected union of all relations. The
/// common-neighbor count is exact at any size, so no sampling is needed.
pub fn build_signature_table(graph: &HeteroGraph) -> SignatureTable {
    let adj = graph.undirected_adjacency();
    let quads = quadrilateral_counts(&adj);
    let signatures: Vec<Signature> = (0..adj.len())
        .map(|g| Signature {
            node_type: graph.node_at(g).ty,
            degree: adj[g].len(),
            quadrilaterals: quads[g],
        })
        .collect();
    let unique = mark_unique(&signatures);
    SignatureTable { signatures, unique }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub mode: AttackMode,
    /// Auxiliary nodes whose signature no other auxiliary node shares.
    pub unique_in_auxiliary: usize,
    /// `(auxiliary node, target node)` pairs the attacker committed to.
    pub matched: Vec<(usize, usize)>,
    pub correct: usize,
    /// `correct / unique_in_auxiliary`; `None` when no node is unique.
    pub rate: Option<f64>,
}

impl AttackResult {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

fn key(s: &Signature, mode: AttackMode) -> Signature {
    match mode {
        AttackMode::Signature => *s,
        AttackMode::Degree => Signature { quadrilaterals: 0, ..*s },
    }
}

/// Matches every uniquely-signatured auxiliary node to the target node with
/// the same signature, when exactly one target node carries it. Ground truth
/// is positional: node `g` of the auxiliary graph is node `g` of the target.
pub fn topology_attack(auxiliary: &HeteroGraph, target: &HeteroGraph, mode: AttackMode) -> Result<AttackResult> {
    if auxiliary.schema().node_types != target.schema().node_types {
        return Err(Error::Argument("auxiliary and target graphs have different node types".into()));
    }
    let aux = build_signature_table(auxiliary);
    let tgt = build_signature_table(target);
    let keyed = |t: &SignatureTable| -> Vec<Signature> { t.signatures.iter().map(|s| key(s, mode)).collect() };
    let (aux_keys, tgt_keys) = (keyed(&aux), keyed(&tgt));
    let aux_unique = mark_unique(&aux_keys);
    let mut holders: HashMap<Signature, Vec<usize>> = HashMap::new();
    for (g, s) in tgt_keys.iter().enumerate() {
        holders.entry(*s).or_default().push(g);
    }
    let mut matched = Vec::new();
    for (g, s) in aux_keys.iter().enumerate() {
        if !aux_unique[g] {
            continue;
        }
        if let Some([t]) = holders.get(s).map(Vec::as_slice) {
            matched.push((g, *t));
        }
    }
    let unique_in_auxiliary = aux_unique.iter().filter(|&&u| u).count();
    let correct = matched.iter().filter(|(a, t)| a == t).count();
    Ok(AttackResult {
        mode,
        unique_in_auxiliary,
        matched,
        correct,
        rate: (unique_in_auxiliary > 0).then(|| correct as f64 / unique_in_auxiliary as f64),
    })
}

/// Scores of `src` against every destination of a relation.
fn row_scores(mu: &Array2<f64>, src_row: usize, dst_offset: usize, n_dst: usize) -> Vec<f64> {
    let us = mu.row(src_row);
    (0..n_dst).map(|v| us.dot(&mu.row(dst_offset + v))).collect()
}

/// Rebuilds every relation of `auxiliary` from inner-product scores of the
/// latent means. Node sets and ids are kept.
///
/// [`Reconstruction::AboveMedian`] keeps an auxiliary edge `(u, v)` when `v`
/// scores above the median of all destinations of `u`.
/// [`Reconstruction::TopDegree`] gives each source its auxiliary out-degree
/// `d` and keeps its `d` best-scoring destinations.
pub fn reconstruct_graph(auxiliary: &HeteroGraph, mu: &Array2<f64>, rule: Reconstruction) -> Result<HeteroGraph> {
    if mu.nrows() != auxiliary.total_nodes() {
        return Err(Error::Shape(format!("{} latent rows for {} nodes", mu.nrows(), auxiliary.total_nodes())));
    }
    let off = auxiliary.type_offsets();
    let mut out = auxiliary.clone();
    for (r, rel) in auxiliary.schema().relations.iter().enumerate() {
        let n_dst = auxiliary.num_nodes(rel.dst);
        let mut pairs = Vec::new();
        for (s, nbrs) in auxiliary.out_neighbors(r).iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let scores = row_scores(mu, off[rel.src] + s, off[rel.dst], n_dst);
            match rule {
                Reconstruction::AboveMedian => {
                    let mut sorted = scores.clone();
                    sorted.sort_by(f64::total_cmp);
                    let median = sorted[n_dst / 2];
                    pairs.extend(nbrs.iter().filter(|&&v| scores[v] > median).map(|&v| (s, v)));
                }
                Reconstruction::TopDegree => {
                    let mut ranked: Vec<usize> = (0..n_dst).filter(|&v| rel.src != rel.dst || v != s).collect();
                    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
                    pairs.extend(ranked.into_iter().take(nbrs.len()).map(|v| (s, v)));
                }
            }
        }
        out = out.with_relation_edges(r, &pairs);
    }
    Ok(out)
}

/// Degree-sequence-preserving rewiring by `swaps` double-edge swaps within
/// each relation. Swaps that would create a duplicate edge are skipped.
pub fn rewire<R: rand::Rng>(graph: &HeteroGraph, swaps: usize, rng: &mut R) -> HeteroGraph {
    let mut out = graph.clone();
    for (r, rel) in graph.schema().relations.iter().enumerate() {
        let same = rel.src == rel.dst;
        let mut pairs = graph.edge_pairs(r);
        if pairs.len() < 2 {
            continue;
        }
        let mut set: std::collections::HashSet<(usize, usize)> = pairs.iter().copied().collect();
        for _ in 0..swaps {
            let i = rng.random_range(0..pairs.len());
            let j = rng.random_range(0..pairs.len());
            let ((a, b), (c, d)) = (pairs[i], pairs[j]);
            if i == j || set.contains(&(a, d)) || set.contains(&(c, b)) {
                continue;
            }
            if same && (a == d || c == b || set.contains(&(d, a)) || set.contains(&(b, c))) {
                continue;
            }
            set.remove(&(a, b));
            set.remove(&(c, d));
            set.insert((a, d));
            set.insert((c, b));
            pairs[i] = (a, d);
            pairs[j] = (c, b);
        }
        out = out.with_relation_edges(r, &pairs);
    }
    out
}

/// Signature histogram per node type, for reporting.
pub fn signature_summary(table: &SignatureTable) -> BTreeMap<usize, (usize, usize)> {
    let mut m: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (s, &u) in table.signatures.iter().zip(&table.unique) {
        let e = m.entry(s.node_type).or_default();
        e.0 += 1;
        e.1 += usize::from(u);
    }
    m
}
