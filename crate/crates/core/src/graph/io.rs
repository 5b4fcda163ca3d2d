//! On-disk dataset layout.
//!
//! ```text
//! schema.cfg            node <type> | relation <name> <src> <dst> | metapath <name> <type> <rel> <type> ...
//! nodes_<type>.tsv      id [feature ...]
//! edges_<relation>.tsv  src_id dst_id
//! labels_<type>.tsv     id label            (optional)
//! split_<rel>_<seed>.tsv src_id dst_id tag  (tag: train|val|test|val_neg|test_neg)
//! ```
//!
//! Every file is UTF-8 and tab-delimited; blank lines and `#` comments are skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Edge, EdgeSplit, HeteroGraph, NodeRef, Schema};
use crate::error::{Error, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Non-comment lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim_end_matches('\r');
        if l.trim().is_empty() || l.trim_start().starts_with('#') {
            None
        } else {
            Some((i + 1, l))
        }
    })
}

fn ingest(file: &str, message: impl Into<String>) -> Error {
    Error::Ingest {
        file: file.to_string(),
        message: message.into(),
    }
}

pub fn parse_schema(text: &str) -> Result<Schema> {
    let mut schema = Schema::default();
    let mut pending_paths = Vec::new();
    for (line, rec) in records(text) {
        let tok: Vec<&str> = rec.split_whitespace().collect();
        match tok[0] {
            "node" if tok.len() == 2 => {
                schema.add_node_type(tok[1])?;
            }
            "relation" if tok.len() == 4 => {
                schema.add_relation(tok[1], tok[2], tok[3])?;
            }
            "metapath" if tok.len() >= 3 => pending_paths.push((tok[1].to_string(), tok[2..].to_vec())),
            _ => return Err(ingest("schema.cfg", format!("line {line}: cannot parse `{rec}`"))),
        }
    }
    for (name, toks) in pending_paths {
        let m = schema.parse_metapath(&name, &toks)?;
        schema.metapaths.push(m);
    }
    Ok(schema)
}

pub fn format_schema(schema: &Schema) -> String {
    let mut out = String::from("# node types, relations and meta-paths\n");
    for t in &schema.node_types {
        let _ = writeln!(out, "node\t{t}");
    }
    for r in &schema.relations {
        let _ = writeln!(
            out,
            "relation\t{}\t{}\t{}",
            r.name, schema.node_types[r.src], schema.node_types[r.dst]
        );
    }
    for m in &schema.metapaths {
        let _ = write!(out, "metapath\t{}", m.name);
        for (i, &t) in m.node_types.iter().enumerate() {
            let _ = write!(out, "\t{}", schema.node_types[t]);
            if let Some(&r) = m.relations.get(i) {
                let _ = write!(out, "\t{}", schema.relations[r].name);
            }
        }
        out.push('\n');
    }
    out
}

/// Loads a dataset directory, taking the schema from its `schema.cfg`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<HeteroGraph> {
    let dir = dir.as_ref();
    let schema = parse_schema(&read(&dir.join("schema.cfg"))?)?;
    load_dataset_with_schema(dir, schema)
}

/// Loads node, edge and label files for a declared schema.
pub fn load_dataset_with_schema(dir: impl AsRef<Path>, schema: Schema) -> Result<HeteroGraph> {
    let dir = dir.as_ref();
    let mut node_ids = Vec::new();
    let mut features = Vec::new();
    for tname in &schema.node_types {
        let file = format!("nodes_{tname}.tsv");
        let text = read(&dir.join(&file))?;
        let mut ids = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut width: Option<usize> = None;
        let mut seen = std::collections::HashSet::new();
        for (line, rec) in records(&text) {
            let mut cols = rec.split('\t');
            let id = cols.next().unwrap_or_default().trim().to_string();
            if id.is_empty() {
                return Err(ingest(&file, format!("line {line}: empty node id")));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate node id `{id}` in type `{tname}` ({file} line {line})"
                )));
            }
            let vals = cols
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| ingest(&file, format!("line {line}: bad feature value `{c}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            match width {
                None => width = Some(vals.len()),
                Some(w) if w != vals.len() => {
                    return Err(ingest(
                        &file,
                        format!("line {line}: expected {w} feature columns, found {}", vals.len()),
                    ))
                }
                _ => {}
            }
            ids.push(id);
            rows.push(vals);
        }
        let w = width.unwrap_or(0);
        if w == 0 {
            features.push(None);
        } else {
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            let m = Array2::from_shape_vec((ids.len(), w), flat)
                .map_err(|e| ingest(&file, e.to_string()))?;
            features.push(Some(m));
        }
        node_ids.push(ids);
    }

    let lookup: Vec<std::collections::HashMap<&str, usize>> = node_ids
        .iter()
        .map(|ids| ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect())
        .collect();
    let mut edges = Vec::new();
    for rel in &schema.relations {
        let file = format!("edges_{}.tsv", rel.name);
        let text = read(&dir.join(&file))?;
        let mut list = Vec::new();
        for (line, rec) in records(&text) {
            let cols: Vec<&str> = rec.split('\t').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(ingest(&file, format!("line {line}: expected `src<TAB>dst`")));
            }
            let resolve = |id: &str, ty: usize, role: &str| -> Result<usize> {
                if let Some(&i) = lookup[ty].get(id) {
                    return Ok(i);
                }
                let other = (0..lookup.len()).find(|&t| t != ty && lookup[t].contains_key(id));
                Err(Error::Validation(match other {
                    Some(t) => format!(
                        "edge {}->{} ({file} line {line}): {role} `{id}` has type `{}`, relation `{}` expects `{}`",
                        cols[0], cols[1], schema.node_types[t], rel.name, schema.node_types[ty]
                    ),
                    None => format!(
                        "edge {}->{} ({file} line {line}): unknown {role} `{id}`",
                        cols[0], cols[1]
                    ),
                }))
            };
            let s = resolve(cols[0], rel.src, "source")?;
            let d = resolve(cols[1], rel.dst, "target")?;
            list.push(Edge {
                src: NodeRef::new(rel.src, s),
                dst: NodeRef::new(rel.dst, d),
            });
        }
        edges.push(list);
    }

    let mut graph = HeteroGraph::new(schema, node_ids, features, edges)?;
    for t in 0..graph.num_node_types() {
        let path = dir.join(format!("labels_{}.tsv", graph.schema().node_types[t]));
        if !path.exists() {
            continue;
        }
        let file = path.file_name().unwrap().to_string_lossy().to_string();
        let text = read(&path)?;
        let index = graph.id_index(t);
        let mut labels = BTreeMap::new();
        for (line, rec) in records(&text) {
            let cols: Vec<&str> = rec.split('\t').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(ingest(&file, format!("line {line}: expected `id<TAB>label`")));
            }
            let i = *index
                .get(cols[0])
                .ok_or_else(|| ingest(&file, format!("line {line}: unknown node `{}`", cols[0])))?;
            labels.insert(i, cols[1].to_string());
        }
        graph.set_labels(t, labels);
    }
    Ok(graph)
}

/// Writes `graph` in the layout [`load_dataset`] reads.
pub fn write_dataset(graph: &HeteroGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema = graph.schema();
    write(&dir.join("schema.cfg"), &format_schema(schema))?;
    for (t, tname) in schema.node_types.iter().enumerate() {
        let mut out = String::new();
        let feats = graph.features(t);
        for (i, id) in graph.node_ids(t).iter().enumerate() {
            out.push_str(id);
            if graph.has_raw_features(t) {
                for v in feats.row(i) {
                    let _ = write!(out, "\t{v:?}");
                }
            }
            out.push('\n');
        }
        write(&dir.join(format!("nodes_{tname}.tsv")), &out)?;
        if !graph.labels(t).is_empty() {
            let mut out = String::new();
            for (&i, l) in graph.labels(t) {
                let _ = writeln!(out, "{}\t{l}", graph.node_ids(t)[i]);
            }
            write(&dir.join(format!("labels_{tname}.tsv")), &out)?;
        }
    }
    for (r, rel) in schema.relations.iter().enumerate() {
        let mut out = String::new();
        for e in graph.edges(r) {
            let _ = writeln!(out, "{}\t{}", graph.node_id(e.src), graph.node_id(e.dst));
        }
        write(&dir.join(format!("edges_{}.tsv", rel.name)), &out)?;
    }
    Ok(())
}

/// Serializes a split to `split_<relation>_<seed>.tsv` inside `dir`.
pub fn write_split(graph: &HeteroGraph, split: &EdgeSplit, dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rel = &graph.schema().relations[split.relation];
    let path = dir.join(format!("split_{}_{}.tsv", rel.name, split.seed));
    let mut out = String::from("# src\tdst\ttag\n");
    for (tag, list) in split.tagged() {
        for &(s, d) in list {
            let _ = writeln!(
                out,
                "{}\t{}\t{tag}",
                graph.node_ids(rel.src)[s],
                graph.node_ids(rel.dst)[d]
            );
        }
    }
    write(&path, &out)?;
    Ok(path)
}

pub fn read_split(graph: &HeteroGraph, relation: usize, seed: u64, dir: impl AsRef<Path>) -> Result<EdgeSplit> {
    let rel = &graph.schema().relations[relation];
    let file = format!("split_{}_{}.tsv", rel.name, seed);
    let text = read(&dir.as_ref().join(&file))?;
    let src = graph.id_index(rel.src);
    let dst = graph.id_index(rel.dst);
    let mut split = EdgeSplit {
        relation,
        seed,
        ..EdgeSplit::default()
    };
    for (line, rec) in records(&text) {
        let cols: Vec<&str> = rec.split('\t').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(ingest(&file, format!("line {line}: expected `src<TAB>dst<TAB>tag`")));
        }
        let s = *src
            .get(cols[0])
            .ok_or_else(|| ingest(&file, format!("line {line}: unknown source `{}`", cols[0])))?;
        let d = *dst
            .get(cols[1])
            .ok_or_else(|| ingest(&file, format!("line {line}: unknown target `{}`", cols[1])))?;
        let list = match cols[2] {
            "train" => &mut split.train,
            "val" => &mut split.val,
            "test" => &mut split.test,
            "val_neg" => &mut split.val_neg,
            "test_neg" => &mut split.test_neg,
            other => return Err(ingest(&file, format!("line {line}: unknown tag `{other}`"))),
        };
        list.push((s, d));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::toy;

    #[test]
    fn schema_text_round_trips() {
        let mut g = toy();
        let s = g.schema().clone();
        let m = s.parse_metapath("UIU", &["user", "buys", "item", "buys", "user"]).unwrap();
        let mut s2 = s.clone();
        s2.metapaths.push(m);
        let parsed = parse_schema(&format_schema(&s2)).unwrap();
        assert_eq!(parsed, s2);
        g = HeteroGraph::new(s2, g.node_ids.clone(), vec![None, None, None], g.edges.clone()).unwrap();
        assert_eq!(g.schema().metapaths.len(), 1);
    }

    #[test]
    fn missing_file_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("schema.cfg"), "node a\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("nodes_a.tsv"), "{err}");
    }

    #[test]
    fn wrong_endpoint_type_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("schema.cfg"), "node a\nnode b\nrelation ab a b\n").unwrap();
        fs::write(dir.path().join("nodes_a.tsv"), "a1\n").unwrap();
        fs::write(dir.path().join("nodes_b.tsv"), "b1\n").unwrap();
        fs::write(dir.path().join("edges_ab.tsv"), "b1\ta1\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("b1->a1"), "{err}");
    }

    #[test]
    fn duplicate_id_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("schema.cfg"), "node a\n").unwrap();
        fs::write(dir.path().join("nodes_a.tsv"), "# ids\na1\na1\n").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_type_loads_with_zero_nodes() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("schema.cfg"), "node a\nnode b\nrelation ab a b\n").unwrap();
        fs::write(dir.path().join("nodes_a.tsv"), "a1\t0.5\n").unwrap();
        fs::write(dir.path().join("nodes_b.tsv"), "# nothing\n").unwrap();
        fs::write(dir.path().join("edges_ab.tsv"), "").unwrap();
        let g = load_dataset(dir.path()).unwrap();
        assert_eq!(g.num_nodes(1), 0);
        assert_eq!(g.num_edges(0), 0);
        assert_eq!(g.features(0)[[0, 0]], 0.5);
    }
}
