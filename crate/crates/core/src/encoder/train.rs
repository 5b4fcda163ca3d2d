use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{backward, data, data_mut, forward, sigmoid, EncoderParams, EncoderPlan};
use crate::dp::{feature_sensitivity, gaussian_mechanism, PrivacySpec, SensitivityReduce};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::optim::Adam;
use crate::rng::SeedTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    /// Drop probability on the projected embeddings during training.
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Positive meta-path pairs per step, each matched with one negative.
    pub pairs_per_epoch: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            heads: 8,
            layers: 1,
            dropout: 0.8,
            lr: 5e-3,
            weight_decay: 1e-3,
            epochs: 100,
            pairs_per_epoch: 256,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EncoderReport {
    pub losses: Vec<f64>,
    pub positive_pairs: usize,
    pub num_params: usize,
}

/// Mean binary cross-entropy of `sigmoid(z_u . z_v)` over labelled pairs
/// `(type, u, v)`; returns the loss and its gradient on each fused matrix.
pub fn link_loss(fused: &[Array2<f64>], positives: &[(usize, usize, usize)], negatives: &[(usize, usize, usize)]) -> (f64, Vec<Array2<f64>>) {
    let mut grads: Vec<Array2<f64>> = fused.iter().map(|z| Array2::zeros(z.dim())).collect();
    let count = (positives.len() + negatives.len()).max(1) as f64;
    let mut loss = 0.0;
    for (pairs, label) in [(positives, 1.0), (negatives, 0.0)] {
        for &(t, u, v) in pairs {
            let z = &fused[t];
            let s = z.row(u).dot(&z.row(v));
            let p = sigmoid(s);
            loss -= if label > 0.0 { p.max(1e-300).ln() } else { (1.0 - p).max(1e-300).ln() };
            let g = (p - label) / count;
            let (zu, zv) = (z.row(u).to_owned(), z.row(v).to_owned());
            grads[t].row_mut(u).scaled_add(g, &zv);
            grads[t].row_mut(v).scaled_add(g, &zu);
        }
    }
    (loss / count, grads)
}

fn type_features(graph: &HeteroGraph) -> Vec<Array2<f64>> {
    (0..graph.num_node_types()).map(|t| graph.features(t).clone()).collect()
}

/// Fits the encoder with an unsupervised link objective on meta-path pairs.
pub fn train_encoder(graph: &HeteroGraph, plan: &EncoderPlan, config: &EncoderConfig, seed: u64) -> Result<(EncoderParams, EncoderReport)> {
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(Error::Argument(format!("dropout must lie in [0,1), got {}", config.dropout)));
    }
    let seeds = SeedTree::new(seed);
    let features = type_features(graph);
    let dims: Vec<usize> = features.iter().map(|f| f.ncols()).collect();
    let mut params = EncoderParams::init(&dims, plan, config.hidden, config.heads, config.layers, &mut seeds.stream("encoder.init", 0))?;
    let positives: Vec<(usize, usize, usize)> = plan
        .by_type
        .iter()
        .enumerate()
        .flat_map(|(t, ids)| ids.iter().flat_map(move |&pid| plan.subgraphs[pid].edges().into_iter().map(move |(u, v)| (t, u, v))))
        .collect();
    let mut report = EncoderReport {
        losses: Vec::new(),
        positive_pairs: positives.len(),
        num_params: params.num_params(),
    };
    if positives.is_empty() {
        log::warn!("no meta-path pairs to train the encoder on; keeping initial weights");
        return Ok((params, report));
    }
    let mut opt = Adam::new(config.lr, config.weight_decay);
    for epoch in 0..config.epochs {
        let mut rng = seeds.stream("encoder.pairs", epoch as u64);
        let batch: Vec<_> = (0..config.pairs_per_epoch)
            .map(|_| positives[rng.random_range(0..positives.len())])
            .collect();
        let negatives: Vec<_> = batch
            .iter()
            .map(|&(t, u, _)| {
                let n = plan.num_nodes[t];
                let mut v = rng.random_range(0..n);
                while n > 1 && v == u {
                    v = rng.random_range(0..n);
                }
                (t, u, v)
            })
            .collect();
        let mut drop_rng = seeds.stream("encoder.dropout", epoch as u64);
        let fwd = forward(plan, &features, &params, Some((config.dropout, &mut drop_rng)))?;
        let fused: Vec<Array2<f64>> = fwd.types.iter().map(|t| t.fused.clone()).collect();
        let (loss, dfused) = link_loss(&fused, &batch, &negatives);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("encoder loss became {loss} at epoch {epoch}")));
        }
        let grads = backward(plan, &features, &params, &fwd, &dfused)?;
        opt.step(params.slices_mut(), grads.slices());
        report.losses.push(loss);
    }
    Ok((params, report))
}

/// Feature-noise settings that are not part of the privacy budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureNoise {
    /// Fused rows are clipped to this L2 norm before noising.
    pub embedding_bound: f64,
    pub reduce: SensitivityReduce,
    /// Rescale released rows to unit norm before topology learning.
    pub normalize: bool,
}

impl Default for FeatureNoise {
    fn default() -> Self {
        Self {
            embedding_bound: 1.0,
            reduce: SensitivityReduce::Sum,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeAttention {
    pub node_type: String,
    pub metapaths: Vec<String>,
    pub per_path: Vec<Array2<f64>>,
    /// Clipped fused embeddings, before noise.
    pub fused: Array2<f64>,
    /// `alpha[u][m]`.
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    /// Per-node sensitivity `Delta_u`.
    pub sensitivity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub types: Vec<TypeAttention>,
}

/// Scales every nonzero row to unit L2 norm. Acts on released values only.
pub fn normalize_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

fn clip_rows(z: &mut Array2<f64>, bound: f64) {
    for mut row in z.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > bound {
            row *= bound / norm;
        }
    }
}

/// Fused embeddings, row-clipped, plus `lambda * N(0, (sigma_f * Delta_u)^2)`
/// per coordinate. `privacy = None` returns the clipped embeddings unchanged.
pub fn encode_with_privacy(
    graph: &HeteroGraph,
    plan: &EncoderPlan,
    params: &EncoderParams,
    privacy: Option<&PrivacySpec>,
    noise: &FeatureNoise,
    seed: u64,
) -> Result<(Vec<Array2<f64>>, AttentionOutput)> {
    let sigma = match privacy {
        Some(spec) => {
            spec.validate()?;
            Some((spec.feature_sigma()?, spec.lambda))
        }
        None => None,
    };
    let features = type_features(graph);
    let fwd = forward(plan, &features, params, None)?;
    let seeds = SeedTree::new(seed);
    let mut out = Vec::new();
    let mut types = Vec::new();
    for (t, tf) in fwd.types.into_iter().enumerate() {
        let mut fused = tf.fused;
        clip_rows(&mut fused, noise.embedding_bound);
        let n = fused.nrows();
        let alpha: Vec<Vec<f64>> = (0..n).map(|u| tf.alpha.iter().map(|a| a[u]).collect()).collect();
        let sensitivity = feature_sensitivity(&alpha, &tf.beta, noise.embedding_bound, noise.reduce)?;
        let mut noisy = fused.clone();
        if let Some((sigma_f, lambda)) = sigma {
            let mut rng = seeds.stream("feature_noise", t as u64);
            let width = noisy.ncols();
            let rows = data_mut(&mut noisy);
            for u in 0..n {
                let row = &mut rows[u * width..(u + 1) * width];
                let perturbed = gaussian_mechanism(row, sensitivity[u], lambda * sigma_f, &mut rng)?;
                row.copy_from_slice(&perturbed);
            }
        }
        debug_assert!(data(&noisy).iter().all(|x| x.is_finite()));
        out.push(noisy);
        types.push(TypeAttention {
            node_type: graph.schema().node_types[t].clone(),
            metapaths: tf.path_ids.iter().map(|&p| plan.subgraphs[p].metapath.name.clone()).collect(),
            per_path: tf.per_path,
            fused,
            alpha,
            beta: tf.beta,
            sensitivity,
        });
    }
    Ok((out, AttentionOutput { types }))
}

/// One row per node: id, type, then the embedding values.
pub fn write_embeddings(path: &Path, graph: &HeteroGraph, embeddings: &[Array2<f64>]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (t, z) in embeddings.iter().enumerate() {
        let ty = &graph.schema().node_types[t];
        for (u, row) in z.rows().into_iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}\t{}\t{}", graph.node_ids(t)[u], ty, vals.join("\t")).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct PathSummary<'a> {
    node_type: &'a str,
    metapath: &'a str,
    beta: f64,
    alpha_mean: f64,
    /// Counts of `alpha` over ten equal bins of [0, 1].
    alpha_histogram: [usize; 10],
}

pub fn write_attention_report(path: &Path, output: &AttentionOutput) -> Result<()> {
    let mut rows = Vec::new();
    for ty in &output.types {
        for (m, name) in ty.metapaths.iter().enumerate() {
            let mut hist = [0usize; 10];
            let mut sum = 0.0;
            for a in &ty.alpha {
                hist[((a[m] * 10.0) as usize).min(9)] += 1;
                sum += a[m];
            }
            rows.push(PathSummary {
                node_type: &ty.node_type,
                metapath: name,
                beta: ty.beta[m],
                alpha_mean: if ty.alpha.is_empty() { 0.0 } else { sum / ty.alpha.len() as f64 },
                alpha_histogram: hist,
            });
        }
    }
    std::fs::write(path, serde_json::to_string_pretty(&rows)?).map_err(|e| Error::io(path, e))
}
