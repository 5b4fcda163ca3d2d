//! Planted-community citation graph used for smoke runs and acceptance checks.
//!
//! Three node types (`paper`, `author`, `field`), two relations
//! (`paper_author`, `paper_field`). Every node belongs to one of
//! `communities` groups; papers draw most authors and their field from their
//! own group, and paper features are a noisy community centroid. Authors and
//! fields carry no raw features.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Edge, HeteroGraph, NodeRef, Schema};
use crate::error::Result;
use crate::rng::SeedTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub papers: usize,
    pub authors: usize,
    pub fields: usize,
    pub communities: usize,
    pub min_authors_per_paper: usize,
    pub max_authors_per_paper: usize,
    pub in_community: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    /// Exponent of the within-community author popularity skew.
    pub popularity_skew: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            papers: 150,
            authors: 130,
            fields: 20,
            communities: 6,
            min_authors_per_paper: 4,
            max_authors_per_paper: 8,
            in_community: 0.95,
            feature_dim: 16,
            feature_noise: 1.0,
            popularity_skew: 0.7,
        }
    }
}

/// Counts the generator produced, for checking a write/load round trip.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub node_counts: BTreeMap<String, usize>,
    pub edge_counts: BTreeMap<String, usize>,
}

pub fn schema() -> Schema {
    let mut s = Schema::default();
    for t in ["paper", "author", "field"] {
        s.add_node_type(t).expect("fresh schema");
    }
    s.add_relation("paper_author", "paper", "author").expect("types exist");
    s.add_relation("paper_field", "paper", "field").expect("types exist");
    let paths: [(&str, &[&str]); 4] = [
        ("PAP", &["paper", "paper_author", "author", "paper_author", "paper"]),
        ("PFP", &["paper", "paper_field", "field", "paper_field", "paper"]),
        ("APA", &["author", "paper_author", "paper", "paper_author", "author"]),
        (
            "FPAPF",
            &["field", "paper_field", "paper", "paper_author", "author", "paper_author", "paper", "paper_field", "field"],
        ),
    ];
    for (name, toks) in paths {
        let m = s.parse_metapath(name, toks).expect("valid meta-path");
        s.metapaths.push(m);
    }
    s
}

fn community_of(i: usize, n: usize, k: usize) -> usize {
    (i * k) / n.max(1)
}

pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<(HeteroGraph, SyntheticRecord)> {
    let mut rng = SeedTree::new(seed).stream("synthetic", 0);
    let k = config.communities.max(1);
    let members = |n: usize| -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); k];
        for i in 0..n {
            out[community_of(i, n, k)].push(i);
        }
        out
    };
    let author_groups = members(config.authors);
    let field_groups = members(config.fields);

    let centroids: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..config.feature_dim).map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>())
        .collect();
    let mut feats = Array2::zeros((config.papers, config.feature_dim));
    for p in 0..config.papers {
        let c = community_of(p, config.papers, k);
        for j in 0..config.feature_dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            feats[[p, j]] = centroids[c][j] + config.feature_noise * noise;
        }
    }

    let pick_weighted = |rng: &mut rand_chacha::ChaCha20Rng, group: &[usize]| -> usize {
        let w: Vec<f64> = (0..group.len())
            .map(|r| 1.0 / (1.0 + r as f64).powf(config.popularity_skew))
            .collect();
        let total: f64 = w.iter().sum();
        let mut x = rng.random::<f64>() * total;
        for (i, wi) in w.iter().enumerate() {
            if x < *wi {
                return group[i];
            }
            x -= wi;
        }
        *group.last().expect("nonempty group")
    };

    let mut paper_author = Vec::new();
    let mut paper_field = Vec::new();
    for p in 0..config.papers {
        let c = community_of(p, config.papers, k);
        let want = rng.random_range(config.min_authors_per_paper..=config.max_authors_per_paper);
        let want = want.min(config.authors);
        let mut chosen = HashSet::new();
        while chosen.len() < want {
            let a = if rng.random::<f64>() < config.in_community && !author_groups[c].is_empty() {
                pick_weighted(&mut rng, &author_groups[c])
            } else {
                rng.random_range(0..config.authors)
            };
            if chosen.insert(a) {
                paper_author.push(Edge { src: NodeRef::new(0, p), dst: NodeRef::new(1, a) });
            }
        }
        if config.fields > 0 {
            let f = if rng.random::<f64>() < config.in_community && !field_groups[c].is_empty() {
                field_groups[c][rng.random_range(0..field_groups[c].len())]
            } else {
                rng.random_range(0..config.fields)
            };
            paper_field.push(Edge { src: NodeRef::new(0, p), dst: NodeRef::new(2, f) });
        }
    }

    let ids = vec![
        (0..config.papers).map(|i| format!("p{i}")).collect(),
        (0..config.authors).map(|i| format!("a{i}")).collect(),
        (0..config.fields).map(|i| format!("f{i}")).collect(),
    ];
    let mut graph = HeteroGraph::new(schema(), ids, vec![Some(feats), None, None], vec![paper_author, paper_field])?;
    let labels = (0..config.papers)
        .map(|p| (p, format!("c{}", community_of(p, config.papers, k))))
        .collect();
    graph.set_labels(0, labels);

    let mut record = SyntheticRecord::default();
    for t in 0..graph.num_node_types() {
        record
            .node_counts
            .insert(graph.schema().node_types[t].clone(), graph.num_nodes(t));
    }
    for r in 0..graph.schema().relations.len() {
        record
            .edge_counts
            .insert(graph.schema().relations[r].name.clone(), graph.num_edges(r));
    }
    Ok((graph, record))
}
