//! Heterogeneous graph data model.
//!
//! Nodes are addressed per type: a [`NodeRef`] pairs a node-type index with
//! the node's row in that type's id list and feature matrix. Edges live in
//! one list per relation, so the relation of an edge is the list it sits in.

mod io;
mod semantic;
mod split;
pub mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, load_dataset_with_schema, read_split, write_dataset, write_split};
pub use semantic::{enumerate_walk_pairs, extract_semantic_subgraph, SemanticSubgraph};
pub use split::{sample_non_edges, split_edges, EdgeSplit, DEFAULT_SPLIT_RATIOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub ty: usize,
    pub idx: usize,
}

impl NodeRef {
    pub fn new(ty: usize, idx: usize) -> Self {
        Self { ty, idx }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeRef,
    pub dst: NodeRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationType {
    pub name: String,
    pub src: usize,
    pub dst: usize,
}

/// Alternating node types and relations: `node_types.len() == relations.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPath {
    pub name: String,
    pub node_types: Vec<usize>,
    pub relations: Vec<usize>,
}

impl MetaPath {
    pub fn start_type(&self) -> usize {
        self.node_types[0]
    }

    pub fn end_type(&self) -> usize {
        *self.node_types.last().expect("meta-path has at least one node type")
    }

    pub fn len(&self) -> usize {
        self.node_types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_types.is_empty()
    }
}

/// Direction in which a meta-path step traverses a relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Forward,
    Backward,
    /// Relation between two nodes of the same type: both directions.
    Both,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub node_types: Vec<String>,
    pub relations: Vec<RelationType>,
    pub metapaths: Vec<MetaPath>,
}

impl Schema {
    pub fn node_type(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|n| n == name)
    }

    pub fn relation(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }

    pub fn add_node_type(&mut self, name: &str) -> Result<usize> {
        if self.node_type(name).is_some() {
            return Err(Error::Schema(format!("duplicate node type `{name}`")));
        }
        self.node_types.push(name.to_string());
        Ok(self.node_types.len() - 1)
    }

    pub fn add_relation(&mut self, name: &str, src: &str, dst: &str) -> Result<usize> {
        if self.relation(name).is_some() {
            return Err(Error::Schema(format!("duplicate relation `{name}`")));
        }
        let src = self
            .node_type(src)
            .ok_or_else(|| Error::Schema(format!("relation `{name}`: unknown node type `{src}`")))?;
        let dst = self
            .node_type(dst)
            .ok_or_else(|| Error::Schema(format!("relation `{name}`: unknown node type `{dst}`")))?;
        self.relations.push(RelationType {
            name: name.to_string(),
            src,
            dst,
        });
        Ok(self.relations.len() - 1)
    }

    /// Parses `type rel type rel ... type` into a checked meta-path.
    pub fn parse_metapath(&self, name: &str, tokens: &[&str]) -> Result<MetaPath> {
        if tokens.is_empty() || tokens.len() % 2 == 0 {
            return Err(Error::Schema(format!(
                "meta-path `{name}` must alternate node types and relations, starting and ending with a node type"
            )));
        }
        let mut node_types = Vec::new();
        let mut relations = Vec::new();
        for (i, tok) in tokens.iter().enumerate() {
            if i % 2 == 0 {
                node_types.push(self.node_type(tok).ok_or_else(|| {
                    Error::Schema(format!("meta-path `{name}`: unknown node type `{tok}`"))
                })?);
            } else {
                relations.push(self.relation(tok).ok_or_else(|| {
                    Error::Schema(format!("meta-path `{name}`: unknown relation `{tok}`"))
                })?);
            }
        }
        let m = MetaPath {
            name: name.to_string(),
            node_types,
            relations,
        };
        self.check_metapath(&m)?;
        Ok(m)
    }

    pub fn check_metapath(&self, m: &MetaPath) -> Result<()> {
        if m.node_types.is_empty() || m.node_types.len() != m.relations.len() + 1 {
            return Err(Error::Schema(format!("meta-path `{}` is malformed", m.name)));
        }
        for &t in &m.node_types {
            if t >= self.node_types.len() {
                return Err(Error::Schema(format!("meta-path `{}`: unknown node type #{t}", m.name)));
            }
        }
        for i in 0..m.relations.len() {
            self.orientation(m.relations[i], m.node_types[i], m.node_types[i + 1])
                .map_err(|e| Error::Schema(format!("meta-path `{}`: {e}", m.name)))?;
        }
        Ok(())
    }

    /// How relation `rel` is walked when stepping from `from` to `to`.
    pub fn orientation(&self, rel: usize, from: usize, to: usize) -> Result<Orientation> {
        let r = self
            .relations
            .get(rel)
            .ok_or_else(|| Error::Schema(format!("unknown relation #{rel}")))?;
        if r.src == from && r.dst == to {
            if r.src == r.dst {
                Ok(Orientation::Both)
            } else {
                Ok(Orientation::Forward)
            }
        } else if r.dst == from && r.src == to {
            Ok(Orientation::Backward)
        } else {
            Err(Error::Schema(format!(
                "relation `{}` ({} -> {}) does not connect {} and {}",
                r.name,
                self.node_types[r.src],
                self.node_types[r.dst],
                self.node_types.get(from).map(String::as_str).unwrap_or("?"),
                self.node_types.get(to).map(String::as_str).unwrap_or("?"),
            )))
        }
    }

    /// Meta-paths that start (and end) at `ty`.
    pub fn metapaths_for(&self, ty: usize) -> Vec<&MetaPath> {
        self.metapaths.iter().filter(|m| m.start_type() == ty).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    schema: Schema,
    node_ids: Vec<Vec<String>>,
    features: Vec<Array2<f64>>,
    raw_features: Vec<bool>,
    edges: Vec<Vec<Edge>>,
    labels: Vec<BTreeMap<usize, String>>,
}

impl HeteroGraph {
    /// Builds a graph and rejects it if any invariant fails.
    ///
    /// `features[t] == None` gives type `t` one-hot identity features.
    pub fn new(
        schema: Schema,
        node_ids: Vec<Vec<String>>,
        features: Vec<Option<Array2<f64>>>,
        edges: Vec<Vec<Edge>>,
    ) -> Result<Self> {
        let g = Self::from_parts_unchecked(schema, node_ids, features, edges);
        let report = validate(&g);
        if let Some(v) = report.violations.first() {
            return Err(Error::Validation(format!(
                "{v} ({} violation(s) in total)",
                report.violations.len()
            )));
        }
        Ok(g)
    }

    /// Assembles a graph without checking it; [`validate`] reports what is wrong.
    pub fn from_parts_unchecked(
        schema: Schema,
        node_ids: Vec<Vec<String>>,
        features: Vec<Option<Array2<f64>>>,
        mut edges: Vec<Vec<Edge>>,
    ) -> Self {
        let mut raw_features = Vec::with_capacity(node_ids.len());
        let mut feats = Vec::with_capacity(node_ids.len());
        for (t, ids) in node_ids.iter().enumerate() {
            match features.get(t).cloned().flatten() {
                Some(f) => {
                    raw_features.push(true);
                    feats.push(f);
                }
                None => {
                    raw_features.push(false);
                    feats.push(Array2::eye(ids.len()));
                }
            }
        }
        edges.resize(schema.relations.len(), Vec::new());
        let labels = vec![BTreeMap::new(); node_ids.len()];
        Self {
            schema,
            node_ids,
            features: feats,
            raw_features,
            edges,
            labels,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_node_types(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_nodes(&self, ty: usize) -> usize {
        self.node_ids[ty].len()
    }

    pub fn total_nodes(&self) -> usize {
        self.node_ids.iter().map(Vec::len).sum()
    }

    pub fn node_ids(&self, ty: usize) -> &[String] {
        &self.node_ids[ty]
    }

    pub fn node_id(&self, n: NodeRef) -> &str {
        &self.node_ids[n.ty][n.idx]
    }

    /// Row offset of each type in the concatenated node ordering (types in schema order).
    pub fn type_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.node_ids.len() + 1);
        let mut acc = 0;
        for ids in &self.node_ids {
            out.push(acc);
            acc += ids.len();
        }
        out.push(acc);
        out
    }

    pub fn features(&self, ty: usize) -> &Array2<f64> {
        &self.features[ty]
    }

    pub fn has_raw_features(&self, ty: usize) -> bool {
        self.raw_features[ty]
    }

    pub fn edges(&self, rel: usize) -> &[Edge] {
        &self.edges[rel]
    }

    pub fn num_edges(&self, rel: usize) -> usize {
        self.edges[rel].len()
    }

    /// Edges of `rel` as `(src index, dst index)` within their types.
    pub fn edge_pairs(&self, rel: usize) -> Vec<(usize, usize)> {
        self.edges[rel].iter().map(|e| (e.src.idx, e.dst.idx)).collect()
    }

    pub fn edge_set(&self, rel: usize) -> HashSet<(usize, usize)> {
        self.edges[rel].iter().map(|e| (e.src.idx, e.dst.idx)).collect()
    }

    /// Forward adjacency of `rel`: for each source node, its destination indices.
    pub fn out_neighbors(&self, rel: usize) -> Vec<Vec<usize>> {
        let r = &self.schema.relations[rel];
        let mut adj = vec![Vec::new(); self.num_nodes(r.src)];
        for e in &self.edges[rel] {
            adj[e.src.idx].push(e.dst.idx);
        }
        adj
    }

    /// Reverse adjacency of `rel`: for each destination node, its source indices.
    pub fn in_neighbors(&self, rel: usize) -> Vec<Vec<usize>> {
        let r = &self.schema.relations[rel];
        let mut adj = vec![Vec::new(); self.num_nodes(r.dst)];
        for e in &self.edges[rel] {
            adj[e.dst.idx].push(e.src.idx);
        }
        adj
    }

    pub fn set_labels(&mut self, ty: usize, labels: BTreeMap<usize, String>) {
        self.labels[ty] = labels;
    }

    pub fn labels(&self, ty: usize) -> &BTreeMap<usize, String> {
        &self.labels[ty]
    }

    /// Copy of the graph with relation `rel` replaced by `pairs`.
    pub fn with_relation_edges(&self, rel: usize, pairs: &[(usize, usize)]) -> Self {
        let r = &self.schema.relations[rel];
        let mut g = self.clone();
        g.edges[rel] = pairs
            .iter()
            .map(|&(s, d)| Edge {
                src: NodeRef::new(r.src, s),
                dst: NodeRef::new(r.dst, d),
            })
            .collect();
        g
    }

    /// Copy of the graph without the listed pairs of relation `rel`.
    pub fn without_edges(&self, rel: usize, removed: &[(usize, usize)]) -> Self {
        let drop: HashSet<(usize, usize)> = removed.iter().copied().collect();
        let kept: Vec<(usize, usize)> = self
            .edge_pairs(rel)
            .into_iter()
            .filter(|p| !drop.contains(p))
            .collect();
        self.with_relation_edges(rel, &kept)
    }

    /// Undirected simple adjacency over all nodes, indexed by global position
    /// (see [`HeteroGraph::type_offsets`]). Relation labels are dropped.
    pub fn undirected_adjacency(&self) -> Vec<Vec<usize>> {
        let off = self.type_offsets();
        let mut sets: Vec<HashSet<usize>> = vec![HashSet::new(); self.total_nodes()];
        for list in &self.edges {
            for e in list {
                let a = off[e.src.ty] + e.src.idx;
                let b = off[e.dst.ty] + e.dst.idx;
                if a != b {
                    sets[a].insert(b);
                    sets[b].insert(a);
                }
            }
        }
        sets.into_iter()
            .map(|s| {
                let mut v: Vec<usize> = s.into_iter().collect();
                v.sort_unstable();
                v
            })
            .collect()
    }

    /// Maps a global position back to a typed node.
    pub fn node_at(&self, global: usize) -> NodeRef {
        let off = self.type_offsets();
        let ty = (0..self.num_node_types())
            .find(|&t| global < off[t + 1])
            .expect("global index in range");
        NodeRef::new(ty, global - off[ty])
    }

    pub fn id_index(&self, ty: usize) -> HashMap<&str, usize> {
        self.node_ids[ty]
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DanglingEndpoint {
        relation: String,
        edge: usize,
        endpoint: String,
    },
    SignatureMismatch {
        relation: String,
        edge: usize,
    },
    FeatureRows {
        node_type: String,
        expected: usize,
        found: usize,
    },
    DuplicateNodeId {
        node_type: String,
        id: String,
    },
    UnknownNodeType {
        index: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingEndpoint {
                relation,
                edge,
                endpoint,
            } => write!(f, "dangling endpoint: edge #{edge} of `{relation}` ({endpoint})"),
            Violation::SignatureMismatch { relation, edge } => {
                write!(f, "signature mismatch: edge #{edge} of `{relation}`")
            }
            Violation::FeatureRows {
                node_type,
                expected,
                found,
            } => write!(
                f,
                "feature rows for `{node_type}`: expected {expected}, found {found}"
            ),
            Violation::DuplicateNodeId { node_type, id } => {
                write!(f, "duplicate node id `{id}` in type `{node_type}`")
            }
            Violation::UnknownNodeType { index } => write!(f, "unknown node type #{index}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every graph invariant and lists each violation found.
pub fn validate(graph: &HeteroGraph) -> ValidationReport {
    let mut violations = Vec::new();
    let schema = &graph.schema;
    if graph.node_ids.len() != schema.node_types.len() {
        for index in schema.node_types.len()..graph.node_ids.len() {
            violations.push(Violation::UnknownNodeType { index });
        }
    }
    for (t, ids) in graph.node_ids.iter().enumerate() {
        let tname = schema.node_types.get(t).cloned().unwrap_or_else(|| format!("#{t}"));
        let mut seen = HashSet::new();
        for id in ids {
            if !seen.insert(id.as_str()) {
                violations.push(Violation::DuplicateNodeId {
                    node_type: tname.clone(),
                    id: id.clone(),
                });
            }
        }
        let rows = graph.features[t].nrows();
        if rows != ids.len() {
            violations.push(Violation::FeatureRows {
                node_type: tname,
                expected: ids.len(),
                found: rows,
            });
        }
    }
    for (r, list) in graph.edges.iter().enumerate() {
        let rel = &schema.relations[r];
        for (i, e) in list.iter().enumerate() {
            let mut dangling = false;
            for (end, label) in [(e.src, "source"), (e.dst, "target")] {
                if end.ty >= graph.node_ids.len() || end.idx >= graph.node_ids[end.ty].len() {
                    dangling = true;
                    violations.push(Violation::DanglingEndpoint {
                        relation: rel.name.clone(),
                        edge: i,
                        endpoint: format!("{label} {}:{}", end.ty, end.idx),
                    });
                }
            }
            if !dangling && (e.src.ty != rel.src || e.dst.ty != rel.dst) {
                violations.push(Violation::SignatureMismatch {
                    relation: rel.name.clone(),
                    edge: i,
                });
            }
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Two users, one item, one shop: u0-i0, u1-i0, i0-s0.
    pub(crate) fn toy() -> HeteroGraph {
        let mut schema = Schema::default();
        schema.add_node_type("user").unwrap();
        schema.add_node_type("item").unwrap();
        schema.add_node_type("shop").unwrap();
        schema.add_relation("buys", "user", "item").unwrap();
        schema.add_relation("sold_by", "item", "shop").unwrap();
        let ids = vec![
            vec!["u0".into(), "u1".into()],
            vec!["i0".into()],
            vec!["s0".into()],
        ];
        let edges = vec![
            vec![
                Edge { src: NodeRef::new(0, 0), dst: NodeRef::new(1, 0) },
                Edge { src: NodeRef::new(0, 1), dst: NodeRef::new(1, 0) },
            ],
            vec![Edge { src: NodeRef::new(1, 0), dst: NodeRef::new(2, 0) }],
        ];
        HeteroGraph::new(schema, ids, vec![None, None, None], edges).unwrap()
    }

    #[test]
    fn well_formed_graph_has_no_violations() {
        assert!(validate(&toy()).is_valid());
    }

    #[test]
    fn unknown_target_is_one_dangling_entry() {
        let g = toy();
        let mut edges = g.edges.clone();
        edges[0].push(Edge {
            src: NodeRef::new(0, 0),
            dst: NodeRef::new(1, 9),
        });
        let bad = HeteroGraph::from_parts_unchecked(
            g.schema.clone(),
            g.node_ids.clone(),
            vec![None, None, None],
            edges,
        );
        let report = validate(&bad);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(report.violations[0], Violation::DanglingEndpoint { .. }));
    }

    #[test]
    fn swapped_endpoint_types_is_one_signature_mismatch() {
        let g = toy();
        let mut edges = g.edges.clone();
        let e = edges[0][0];
        edges[0][0] = Edge { src: e.dst, dst: e.src };
        let bad = HeteroGraph::from_parts_unchecked(
            g.schema.clone(),
            g.node_ids.clone(),
            vec![None, None, None],
            edges,
        );
        let report = validate(&bad);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(report.violations[0], Violation::SignatureMismatch { edge: 0, .. }));
    }

    #[test]
    fn duplicate_ids_and_feature_rows_are_reported() {
        let g = toy();
        let mut ids = g.node_ids.clone();
        ids[0].push("u0".into());
        let bad = HeteroGraph::from_parts_unchecked(
            g.schema.clone(),
            ids,
            vec![Some(Array2::zeros((2, 3))), None, None],
            g.edges.clone(),
        );
        let report = validate(&bad);
        assert_eq!(report.violations.len(), 2);
        assert!(HeteroGraph::new(
            bad.schema.clone(),
            bad.node_ids.clone(),
            vec![None, None, None],
            bad.edges.clone()
        )
        .is_err());
    }

    #[test]
    fn featureless_types_get_identity_features() {
        let g = toy();
        assert!(!g.has_raw_features(0));
        assert_eq!(g.features(0), &Array2::<f64>::eye(2));
    }

    #[test]
    fn metapath_parsing_checks_signatures() {
        let g = toy();
        let s = g.schema();
        let m = s.parse_metapath("UIU", &["user", "buys", "item", "buys", "user"]).unwrap();
        assert_eq!(m.node_types, vec![0, 1, 0]);
        assert!(s.parse_metapath("bad", &["user", "sold_by", "item"]).is_err());
        assert!(s.parse_metapath("bad", &["user", "nope", "item"]).is_err());
        assert!(s.parse_metapath("bad", &["user", "buys"]).is_err());
    }
}
