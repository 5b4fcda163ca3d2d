//! Meta-path attention encoder.
//!
//! Each node type is projected into a shared hidden space, aggregated over
//! every meta-path subgraph with multi-head neighbor attention, and the
//! per-meta-path embeddings are fused with a semantic attention softmax.
//! The encoder also reports the influence coefficients that drive the
//! per-node feature-noise sensitivity.

mod model;
mod train;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{extract_semantic_subgraph, HeteroGraph, MetaPath, SemanticSubgraph};

pub use model::{backward, forward, Forward, TypeForward};
pub use train::{
    encode_with_privacy, link_loss, train_encoder, write_attention_report, write_embeddings, AttentionOutput,
    EncoderConfig, EncoderReport, FeatureNoise, TypeAttention, normalize_rows,
};

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub(crate) fn leaky_relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn data(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn data_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

/// Meta-path subgraphs grouped by endpoint type. A type with no meta-path
/// gets an edgeless one, so each of its nodes attends only to itself.
#[derive(Debug, Clone)]
pub struct EncoderPlan {
    pub subgraphs: Vec<SemanticSubgraph>,
    /// Attention neighborhoods per subgraph (self-loop for isolated nodes).
    pub neighborhoods: Vec<Vec<Vec<usize>>>,
    pub by_type: Vec<Vec<usize>>,
    pub num_nodes: Vec<usize>,
}

impl EncoderPlan {
    pub fn build(graph: &HeteroGraph, metapaths: &[MetaPath]) -> Result<Self> {
        let types = graph.num_node_types();
        let mut subgraphs = Vec::new();
        let mut by_type = vec![Vec::new(); types];
        for m in metapaths {
            let sg = extract_semantic_subgraph(graph, m)?;
            by_type[sg.node_type].push(subgraphs.len());
            subgraphs.push(sg);
        }
        for (t, paths) in by_type.iter_mut().enumerate() {
            if paths.is_empty() {
                let m = MetaPath {
                    name: graph.schema().node_types[t].clone(),
                    node_types: vec![t],
                    relations: vec![],
                };
                paths.push(subgraphs.len());
                subgraphs.push(extract_semantic_subgraph(graph, &m)?);
            }
        }
        let neighborhoods = subgraphs
            .iter()
            .map(|sg| (0..sg.num_nodes()).map(|u| sg.attention_neighbors(u)).collect())
            .collect();
        Ok(Self {
            subgraphs,
            neighborhoods,
            by_type,
            num_nodes: (0..types).map(|t| graph.num_nodes(t)).collect(),
        })
    }

    pub fn num_types(&self) -> usize {
        self.by_type.len()
    }
}

/// Parameters of one meta-path's attention stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    /// `H x H` projections for layers after the first.
    pub layer_weights: Vec<Array2<f64>>,
    /// Per layer, `K x (H/K)` source and destination attention vectors.
    pub attn_src: Vec<Array2<f64>>,
    pub attn_dst: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    /// Per node type, `input_dim x H`.
    pub w1: Vec<Array2<f64>>,
    pub paths: Vec<PathParams>,
    /// Semantic scoring vector and bias per node type.
    pub w2: Vec<Array1<f64>>,
    pub b: Vec<f64>,
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

impl EncoderParams {
    pub fn init<R: Rng>(input_dims: &[usize], plan: &EncoderPlan, hidden: usize, heads: usize, layers: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || hidden == 0 || layers == 0 || hidden % heads != 0 {
            return Err(Error::Argument(format!(
                "need hidden > 0, heads > 0, layers > 0 and heads | hidden (hidden = {hidden}, heads = {heads}, layers = {layers})"
            )));
        }
        if input_dims.len() != plan.num_types() {
            return Err(Error::Shape(format!("{} input dims for {} node types", input_dims.len(), plan.num_types())));
        }
        let d = hidden / heads;
        let w1 = input_dims.iter().map(|&f| glorot(f, hidden, rng)).collect();
        let paths = plan
            .subgraphs
            .iter()
            .map(|_| PathParams {
                layer_weights: (1..layers).map(|_| glorot(hidden, hidden, rng)).collect(),
                attn_src: (0..layers).map(|_| glorot(heads, d, rng)).collect(),
                attn_dst: (0..layers).map(|_| glorot(heads, d, rng)).collect(),
            })
            .collect();
        let w2 = input_dims
            .iter()
            .map(|_| glorot(1, hidden, rng).row(0).to_owned())
            .collect();
        let params = Self {
            hidden,
            heads,
            layers,
            w1,
            paths,
            w2,
            b: vec![0.0; input_dims.len()],
        };
        params.validate()?;
        Ok(params)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden;
        if self.heads == 0 || h == 0 || h % self.heads != 0 || self.layers == 0 {
            return Err(Error::Shape("inconsistent hidden/head/layer counts".into()));
        }
        let d = self.head_dim();
        if self.w1.iter().any(|w| w.ncols() != h) || self.w2.iter().any(|w| w.len() != h) || self.w2.len() != self.w1.len() || self.b.len() != self.w1.len() {
            return Err(Error::Shape("projection or semantic weights disagree with the hidden size".into()));
        }
        for p in &self.paths {
            if p.layer_weights.len() + 1 != self.layers || p.attn_src.len() != self.layers || p.attn_dst.len() != self.layers {
                return Err(Error::Shape("per-path layer count mismatch".into()));
            }
            if p.layer_weights.iter().any(|w| w.dim() != (h, h)) || p.attn_src.iter().chain(&p.attn_dst).any(|a| a.dim() != (self.heads, d)) {
                return Err(Error::Shape("per-path weight shape mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.dim());
        Self {
            hidden: self.hidden,
            heads: self.heads,
            layers: self.layers,
            w1: self.w1.iter().map(z2).collect(),
            paths: self
                .paths
                .iter()
                .map(|p| PathParams {
                    layer_weights: p.layer_weights.iter().map(z2).collect(),
                    attn_src: p.attn_src.iter().map(z2).collect(),
                    attn_dst: p.attn_dst.iter().map(z2).collect(),
                })
                .collect(),
            w2: self.w2.iter().map(|w| Array1::zeros(w.len())).collect(),
            b: vec![0.0; self.b.len()],
        }
    }

    /// Every parameter tensor as a flat slice, in a fixed order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for w in &mut self.w1 {
            out.push(data_mut(w));
        }
        for p in &mut self.paths {
            for w in p.layer_weights.iter_mut().chain(p.attn_src.iter_mut()).chain(p.attn_dst.iter_mut()) {
                out.push(data_mut(w));
            }
        }
        for w in &mut self.w2 {
            out.push(w.as_slice_mut().expect("contiguous"));
        }
        out.push(&mut self.b);
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for w in &self.w1 {
            out.push(data(w));
        }
        for p in &self.paths {
            for w in p.layer_weights.iter().chain(&p.attn_src).chain(&p.attn_dst) {
                out.push(data(w));
            }
        }
        for w in &self.w2 {
            out.push(w.as_slice().expect("contiguous"));
        }
        out.push(&self.b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

/// `features . w1`.
pub fn project(features: &Array2<f64>, w1: &Array2<f64>) -> Result<Array2<f64>> {
    if features.ncols() != w1.nrows() {
        return Err(Error::Shape(format!(
            "features have {} columns, projection expects {}",
            features.ncols(),
            w1.nrows()
        )));
    }
    Ok(features.dot(w1))
}

/// Softmax attention of each node over its neighborhood for one head.
/// `z` columns `[head*d, (head+1)*d)` are the head's block, `d = a_src.len()`.
/// Entry `u` of the result is aligned with `neighborhoods[u]`.
pub fn head_attention(
    neighborhoods: &[Vec<usize>],
    z: &Array2<f64>,
    a_src: ArrayView1<f64>,
    a_dst: ArrayView1<f64>,
    head: usize,
) -> Result<Vec<Vec<f64>>> {
    Ok(model::head_forward(neighborhoods, z, a_src, a_dst, head)?.weights)
}

/// [`head_attention`] on a semantic subgraph, isolated nodes attending to themselves.
pub fn node_attention(
    subgraph: &SemanticSubgraph,
    z: &Array2<f64>,
    a_src: ArrayView1<f64>,
    a_dst: ArrayView1<f64>,
    head: usize,
) -> Result<Vec<Vec<f64>>> {
    let nbrs: Vec<Vec<usize>> = (0..subgraph.num_nodes()).map(|u| subgraph.attention_neighbors(u)).collect();
    head_attention(&nbrs, z, a_src, a_dst, head)
}

/// Concatenated ELU head outputs and the influence coefficient per node.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadAggregate {
    pub h: Array2<f64>,
    pub alpha: Vec<f64>,
}

pub fn multi_head_aggregate(
    neighborhoods: &[Vec<usize>],
    z: &Array2<f64>,
    attn_src: &Array2<f64>,
    attn_dst: &Array2<f64>,
) -> Result<HeadAggregate> {
    let (h, alpha, _) = model::layer_forward(neighborhoods, z, attn_src, attn_dst)?;
    Ok(HeadAggregate { h, alpha })
}

/// Pooled semantic scores `s_m = mean_u LeakyReLU(w2 . z_u^m + b)`.
pub fn semantic_scores(per_path: &[&Array2<f64>], w2: ArrayView1<f64>, b: f64) -> Result<Vec<f64>> {
    let first = per_path.first().ok_or_else(|| Error::Argument("semantic attention needs at least one meta-path".into()))?;
    let n = first.nrows();
    if per_path.iter().any(|z| z.nrows() != n || z.ncols() != w2.len()) {
        return Err(Error::Shape("meta-path embeddings disagree in shape".into()));
    }
    Ok(per_path
        .iter()
        .map(|z| {
            if n == 0 {
                return 0.0;
            }
            z.rows().into_iter().map(|r| leaky_relu(r.dot(&w2) + b)).sum::<f64>() / n as f64
        })
        .collect())
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Semantic weights `beta = softmax(s)`.
pub fn semantic_attention(per_path: &[&Array2<f64>], w2: ArrayView1<f64>, b: f64) -> Result<Vec<f64>> {
    Ok(softmax(&semantic_scores(per_path, w2, b)?))
}

/// `z_u = sum_m beta_m z_u^m`.
pub fn fuse(per_path: &[&Array2<f64>], beta: &[f64]) -> Result<Array2<f64>> {
    if per_path.len() != beta.len() || per_path.is_empty() {
        return Err(Error::Shape(format!("{} meta-path embeddings, {} weights", per_path.len(), beta.len())));
    }
    let dim = per_path[0].dim();
    if per_path.iter().any(|z| z.dim() != dim) {
        return Err(Error::Shape("meta-path embeddings disagree in shape".into()));
    }
    let mut out = Array2::zeros(dim);
    for (z, &b) in per_path.iter().zip(beta) {
        out.scaled_add(b, z);
    }
    Ok(out)
}
