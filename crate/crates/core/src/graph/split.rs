use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HeteroGraph;
use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// Train / validation / test fractions.
pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.85, 0.05, 0.10);

/// Held-out edges of one relation. Pairs are `(src index, dst index)` within their types.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub relation: usize,
    pub seed: u64,
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

impl EdgeSplit {
    pub fn tagged(&self) -> [(&'static str, &Vec<(usize, usize)>); 5] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
            ("val_neg", &self.val_neg),
            ("test_neg", &self.test_neg),
        ]
    }

    pub fn held_out(&self) -> Vec<(usize, usize)> {
        self.val.iter().chain(&self.test).copied().collect()
    }
}

/// Splits the edges of `relation`. Validation and test sizes are floored,
/// the remainder goes to training; negatives match the positive counts.
pub fn split_edges(graph: &HeteroGraph, relation: usize, ratios: (f64, f64, f64), seed: u64) -> Result<EdgeSplit> {
    let rel = graph
        .schema()
        .relations
        .get(relation)
        .ok_or_else(|| Error::Argument(format!("unknown relation #{relation}")))?;
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("split ratios {ratios:?} must be fractions summing to 1")));
    }
    let n = graph.num_edges(relation);
    let n_val = (va * n as f64 + 1e-9).floor() as usize;
    let n_test = (te * n as f64 + 1e-9).floor() as usize;
    if (va > 0.0 && n_val == 0) || (te > 0.0 && n_test == 0) {
        return Err(Error::Split(format!(
            "relation `{}` has {n} edges, too few for nonempty validation and test sets",
            rel.name
        )));
    }
    let seeds = SeedTree::new(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds.stream("split.positives", relation as u64));
    let pairs = graph.edge_pairs(relation);
    let pick = |range: std::ops::Range<usize>| -> Vec<(usize, usize)> { order[range].iter().map(|&i| pairs[i]).collect() };
    let val = pick(0..n_val);
    let test = pick(n_val..n_val + n_test);
    let train = pick(n_val + n_test..n);

    let existing = graph.edge_set(relation);
    let same_type = rel.src == rel.dst;
    let negatives = sample_non_edges(
        graph.num_nodes(rel.src),
        graph.num_nodes(rel.dst),
        same_type,
        &existing,
        n_val + n_test,
        &mut seeds.stream("split.negatives", relation as u64),
    )?;
    let (val_neg, test_neg) = negatives.split_at(n_val);
    Ok(EdgeSplit {
        relation,
        seed,
        train,
        val,
        test,
        val_neg: val_neg.to_vec(),
        test_neg: test_neg.to_vec(),
    })
}

/// Draws `count` distinct pairs uniformly from the non-edges of an `n_src x n_dst` relation.
pub fn sample_non_edges<R: Rng>(
    n_src: usize,
    n_dst: usize,
    same_type: bool,
    existing: &HashSet<(usize, usize)>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let total = n_src * n_dst - if same_type { n_src.min(n_dst) } else { 0 };
    let taken = existing
        .iter()
        .filter(|(s, d)| !(same_type && s == d))
        .count();
    let pool = total.saturating_sub(taken);
    if pool < count {
        return Err(Error::Sampling(format!(
            "only {pool} non-edges available, {count} requested"
        )));
    }
    let valid = |p: &(usize, usize)| !existing.contains(p) && !(same_type && p.0 == p.1);
    if pool <= 4 * count {
        let mut all: Vec<(usize, usize)> = (0..n_src)
            .flat_map(|s| (0..n_dst).map(move |d| (s, d)))
            .filter(valid)
            .collect();
        all.shuffle(rng);
        all.truncate(count);
        return Ok(all);
    }
    let mut chosen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = (rng.random_range(0..n_src), rng.random_range(0..n_dst));
        if valid(&p) && chosen.insert(p) {
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, NodeRef, Schema};

    fn bipartite(n_edges: usize) -> HeteroGraph {
        let mut s = Schema::default();
        s.add_node_type("u").unwrap();
        s.add_node_type("i").unwrap();
        s.add_relation("ui", "u", "i").unwrap();
        let ids = vec![
            (0..20).map(|i| format!("u{i}")).collect(),
            (0..30).map(|i| format!("i{i}")).collect(),
        ];
        let edges = vec![(0..n_edges)
            .map(|k| Edge { src: NodeRef::new(0, k % 20), dst: NodeRef::new(1, (k * 7 + k / 20) % 30) })
            .collect()];
        HeteroGraph::new(s, ids, vec![None, None], edges).unwrap()
    }

    #[test]
    fn default_ratios_on_hundred_edges() {
        let g = bipartite(100);
        let s = split_edges(&g, 0, DEFAULT_SPLIT_RATIOS, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (85, 5, 10));
        assert_eq!(s.val_neg.len(), 5);
        assert_eq!(s.test_neg.len(), 10);
        let mut all: Vec<_> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        let mut orig = g.edge_pairs(0);
        all.sort_unstable();
        orig.sort_unstable();
        assert_eq!(all, orig);
        let existing = g.edge_set(0);
        assert!(s.val_neg.iter().chain(&s.test_neg).all(|p| !existing.contains(p)));
    }

    #[test]
    fn degenerate_ratio_keeps_everything_in_train() {
        let g = bipartite(40);
        let s = split_edges(&g, 0, (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(s.train.len(), 40);
        assert!(s.val.is_empty() && s.test.is_empty() && s.val_neg.is_empty() && s.test_neg.is_empty());
    }

    #[test]
    fn same_seed_same_split() {
        let g = bipartite(100);
        assert_eq!(split_edges(&g, 0, DEFAULT_SPLIT_RATIOS, 9).unwrap(), split_edges(&g, 0, DEFAULT_SPLIT_RATIOS, 9).unwrap());
        assert_ne!(split_edges(&g, 0, DEFAULT_SPLIT_RATIOS, 9).unwrap(), split_edges(&g, 0, DEFAULT_SPLIT_RATIOS, 10).unwrap());
    }

    #[test]
    fn too_few_edges_is_a_split_error() {
        let g = bipartite(8);
        assert!(matches!(split_edges(&g, 0, DEFAULT_SPLIT_RATIOS, 0), Err(Error::Split(_))));
    }

    #[test]
    fn exhausted_pool_is_a_sampling_error() {
        let existing: HashSet<_> = (0..3).flat_map(|s| (0..2).map(move |d| (s, d))).collect();
        let mut rng = SeedTree::new(0).stream("t", 0);
        assert!(matches!(sample_non_edges(3, 2, false, &existing, 1, &mut rng), Err(Error::Sampling(_))));
    }
}
