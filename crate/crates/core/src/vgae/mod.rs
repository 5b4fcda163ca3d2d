//! Relation-aware variational graph autoencoder.
//!
//! Every relation contributes two message channels (source to destination
//! and back), optionally plus a shared self channel. A layer sums the
//! mean-normalized channel aggregates, each with its own weights. Two layers
//! give the Gaussian posterior `(mu, log sigma)`; links are scored by the
//! logistic inner product of latent vectors.

mod grad;
mod train;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;

pub use grad::{batch_gradient, example_losses, objective, Example, Workspace};
pub use train::{
    read_checkpoint, split_auc, train, write_checkpoint, Checkpoint, EpochRecord, LossSign, TrainReport, VgaeConfig,
    CHECKPOINT_SCHEMA_VERSION,
};

/// `log sigma` is clamped to this range before exponentiation.
pub const LOG_SIGMA_BOUND: f64 = 10.0;

const NONE: usize = usize::MAX;

/// One message channel: each row node averages its neighbors' vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    /// Global ids of receiving nodes with at least one neighbor.
    pub rows: Vec<usize>,
    pub nbrs: Vec<Vec<usize>>,
    /// Global id to row index, `usize::MAX` when absent.
    pub pos: Vec<usize>,
}

impl Channel {
    fn new(name: String, n_total: usize, lists: Vec<(usize, Vec<usize>)>) -> Self {
        let mut rows = Vec::new();
        let mut nbrs = Vec::new();
        let mut pos = vec![NONE; n_total];
        for (u, mut ns) in lists {
            if ns.is_empty() {
                continue;
            }
            ns.sort_unstable();
            ns.dedup();
            pos[u] = rows.len();
            rows.push(u);
            nbrs.push(ns);
        }
        Self { name, rows, nbrs, pos }
    }

    pub fn row_of(&self, u: usize) -> Option<usize> {
        match self.pos[u] {
            NONE => None,
            r => Some(r),
        }
    }

    /// `zeta`-normalized neighbor mean of `h` for each row.
    pub fn aggregate(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows.len(), h.ncols()));
        for (r, ns) in self.nbrs.iter().enumerate() {
            let zeta = 1.0 / ns.len() as f64;
            let mut row = out.row_mut(r);
            for &v in ns {
                row.scaled_add(zeta, &h.row(v));
            }
        }
        out
    }
}

/// All channels over a graph, with nodes numbered globally by type offset.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub channels: Vec<Channel>,
    pub offsets: Vec<usize>,
    pub n_total: usize,
}

impl ChannelSet {
    pub fn build(graph: &HeteroGraph, self_loops: bool) -> Self {
        let offsets = graph.type_offsets();
        let n_total = graph.total_nodes();
        let mut channels = Vec::new();
        for (r, rel) in graph.schema().relations.iter().enumerate() {
            let (os, od) = (offsets[rel.src], offsets[rel.dst]);
            let fwd = graph.in_neighbors(r);
            let inv = graph.out_neighbors(r);
            channels.push(Channel::new(
                format!("{}:fwd", rel.name),
                n_total,
                fwd.into_iter().enumerate().map(|(v, ns)| (od + v, ns.into_iter().map(|u| os + u).collect())).collect(),
            ));
            channels.push(Channel::new(
                format!("{}:inv", rel.name),
                n_total,
                inv.into_iter().enumerate().map(|(u, ns)| (os + u, ns.into_iter().map(|v| od + v).collect())).collect(),
            ));
        }
        if self_loops {
            channels.push(Channel::new("self".into(), n_total, (0..n_total).map(|u| (u, vec![u])).collect()));
        }
        Self { channels, offsets, n_total }
    }

    pub fn names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }
}

/// Stacks per-type feature matrices into one global matrix.
pub fn stack_features(features: &[Array2<f64>]) -> Result<Array2<f64>> {
    let dim = features.first().map(|f| f.ncols()).unwrap_or(0);
    if features.iter().any(|f| f.ncols() != dim) {
        return Err(Error::Shape("node types carry features of different widths".into()));
    }
    let views: Vec<ArrayView2<f64>> = features.iter().map(|f| f.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Weights of every channel in one flat vector: for each channel,
/// `W1 (F x H)`, then `W_mu (H x L)`, then `W_sigma (H x L)`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VgaeParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub latent: usize,
    pub channels: Vec<String>,
    pub data: Vec<f64>,
}

impl VgaeParams {
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, latent: usize, channels: Vec<String>, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || latent == 0 || channels.is_empty() {
            return Err(Error::Config("VGAE dimensions and channel list must be nonempty".into()));
        }
        let mut p = Self {
            input_dim,
            hidden,
            latent,
            channels,
            data: Vec::new(),
        };
        let mut data = Vec::with_capacity(p.len());
        for _ in 0..p.channels.len() {
            for (rows, cols) in [(input_dim, hidden), (hidden, latent), (hidden, latent)] {
                let limit = 1.0 / (rows as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                data.extend((0..rows * cols).map(|_| dist.sample(rng)));
            }
        }
        p.data = data;
        Ok(p)
    }

    fn block(&self) -> usize {
        self.input_dim * self.hidden + 2 * self.hidden * self.latent
    }

    pub fn len(&self) -> usize {
        self.channels.len() * self.block()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn w1_range(&self, c: usize) -> std::ops::Range<usize> {
        let s = c * self.block();
        s..s + self.input_dim * self.hidden
    }

    pub fn mu_range(&self, c: usize) -> std::ops::Range<usize> {
        let s = self.w1_range(c).end;
        s..s + self.hidden * self.latent
    }

    pub fn sigma_range(&self, c: usize) -> std::ops::Range<usize> {
        let s = self.mu_range(c).end;
        s..s + self.hidden * self.latent
    }

    pub fn w1(&self, c: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.input_dim, self.hidden), &self.data[self.w1_range(c)]).expect("layout")
    }

    pub fn w_mu(&self, c: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.hidden, self.latent), &self.data[self.mu_range(c)]).expect("layout")
    }

    pub fn w_sigma(&self, c: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.hidden, self.latent), &self.data[self.sigma_range(c)]).expect("layout")
    }

    pub fn check_channels(&self, set: &ChannelSet) -> Result<()> {
        let names = set.names();
        if names != self.channels {
            return Err(Error::Config(format!(
                "parameters cover channels {:?} but the graph has {:?}",
                self.channels, names
            )));
        }
        if self.data.len() != self.len() {
            return Err(Error::Shape(format!("{} parameters, layout needs {}", self.data.len(), self.len())));
        }
        Ok(())
    }
}

/// `act(sum_c zeta * sum_{v in N_c(u)} h_v W_c)` over all channels.
pub fn hetegcn_layer(set: &ChannelSet, h: &Array2<f64>, weights: &[ArrayView2<f64>], relu: bool) -> Result<Array2<f64>> {
    if weights.len() != set.channels.len() {
        return Err(Error::Config(format!("{} weight matrices for {} channels", weights.len(), set.channels.len())));
    }
    if h.nrows() != set.n_total {
        return Err(Error::Shape(format!("{} embedding rows for {} nodes", h.nrows(), set.n_total)));
    }
    let d_out = weights.first().map(|w| w.ncols()).unwrap_or(0);
    let mut out = Array2::zeros((set.n_total, d_out));
    for (ch, w) in set.channels.iter().zip(weights) {
        if w.nrows() != h.ncols() || w.ncols() != d_out {
            return Err(Error::Shape(format!("channel {} weights {:?} vs input width {}", ch.name, w.dim(), h.ncols())));
        }
        let msg = ch.aggregate(h).dot(w);
        for (r, &u) in ch.rows.iter().enumerate() {
            let mut row = out.row_mut(u);
            row += &msg.row(r);
        }
    }
    if relu {
        out.mapv_inplace(|x| x.max(0.0));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
}

/// Deterministic posterior parameters; `logvar = 2 log sigma`.
pub fn encode(set: &ChannelSet, features: &Array2<f64>, params: &VgaeParams) -> Result<LatentState> {
    params.check_channels(set)?;
    let n = set.channels.len();
    let w1: Vec<_> = (0..n).map(|c| params.w1(c)).collect();
    let h1 = hetegcn_layer(set, features, &w1, true)?;
    let wm: Vec<_> = (0..n).map(|c| params.w_mu(c)).collect();
    let ws: Vec<_> = (0..n).map(|c| params.w_sigma(c)).collect();
    let mu = hetegcn_layer(set, &h1, &wm, false)?;
    let logsig = hetegcn_layer(set, &h1, &ws, false)?;
    let logvar = logsig.mapv(|s| 2.0 * s.clamp(-LOG_SIGMA_BOUND, LOG_SIGMA_BOUND));
    Ok(LatentState { mu, logvar })
}

/// `Z = mu + exp(logvar / 2) * noise`, noise drawn row-major from `rng`.
pub fn reparameterize<R: Rng>(latent: &LatentState, rng: &mut R) -> Array2<f64> {
    let mut z = latent.mu.clone();
    for (zi, lv) in z.iter_mut().zip(latent.logvar.iter()) {
        let e: f64 = StandardNormal.sample(rng);
        let s = (0.5 * lv).exp();
        if s > 0.0 {
            *zi += s * e;
        }
    }
    z
}

pub fn logistic(x: f64) -> f64 {
    crate::encoder::sigmoid(x)
}

/// `-ln logistic(x)`, stable for large `|x|`.
pub fn softplus_neg(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

pub fn decode(z_u: &[f64], z_v: &[f64]) -> f64 {
    let s: f64 = z_u.iter().zip(z_v).map(|(a, b)| a * b).sum();
    logistic(s)
}

/// `k` uniform non-edges `(u, v')` per positive `(u, v)`, `v'` from `0..n_dst`.
pub fn negative_sample<R: Rng>(
    n_dst: usize,
    same_type: bool,
    positives: &[(usize, usize)],
    all_positive: &std::collections::HashSet<(usize, usize)>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    if k == 0 {
        return Err(Error::Argument("need at least one negative per positive".into()));
    }
    let mut out = Vec::with_capacity(positives.len() * k);
    let mut free_cache: std::collections::HashMap<usize, Vec<usize>> = std::collections::HashMap::new();
    for &(u, _) in positives {
        for _ in 0..k {
            let mut found = None;
            for _ in 0..64 {
                let v = rng.random_range(0..n_dst);
                if !all_positive.contains(&(u, v)) && !(same_type && v == u) {
                    found = Some(v);
                    break;
                }
            }
            let v = match found {
                Some(v) => v,
                None => {
                    let free = free_cache.entry(u).or_insert_with(|| {
                        (0..n_dst).filter(|&v| !all_positive.contains(&(u, v)) && !(same_type && v == u)).collect()
                    });
                    if free.is_empty() {
                        return Err(Error::Sampling(format!(
                            "node {u} has no non-edge to sample; reduce the negative count k = {k}"
                        )));
                    }
                    free[rng.random_range(0..free.len())]
                }
            };
            out.push((u, v));
        }
    }
    Ok(out)
}

/// Mean over positives of `-ln s(q) - sum_j ln s(-p_j)`, where the `k`
/// negatives of positive `i` are `neg_scores[i*k..(i+1)*k]`.
pub fn recon_loss(pos_scores: &[f64], neg_scores: &[f64], k: usize) -> Result<f64> {
    if pos_scores.is_empty() || neg_scores.len() != pos_scores.len() * k {
        return Err(Error::Argument(format!(
            "{} positive and {} negative scores for k = {k}",
            pos_scores.len(),
            neg_scores.len()
        )));
    }
    let pos: f64 = pos_scores.iter().map(|&q| softplus_neg(q)).sum();
    let neg: f64 = neg_scores.iter().map(|&p| softplus_neg(-p)).sum();
    Ok((pos + neg) / pos_scores.len() as f64)
}

/// `sum 0.5 (mu^2 + sigma^2 - 1 - ln sigma^2)` over all nodes and dimensions.
pub fn kl_loss(latent: &LatentState) -> f64 {
    latent
        .mu
        .iter()
        .zip(latent.logvar.iter())
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

#[cfg(test)]
mod tests;
