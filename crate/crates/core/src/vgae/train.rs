use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::grad::{example_gradient, forward_cache, Precomputed};
use super::{encode, negative_sample, stack_features, ChannelSet, Example, VgaeParams, Workspace};
use crate::dp::{accountant_feasible, calibrate_noise_multiplier, AccountantLedger, ClippedSum, PrivacySpec};
use crate::error::{Error, Result};
use crate::eval::link_prediction_auc;
use crate::graph::{EdgeSplit, HeteroGraph};
use crate::rng::SeedTree;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Sign of the KL term in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSign {
    /// Minimize reconstruction plus weighted KL.
    #[default]
    Standard,
    /// Minimize reconstruction minus weighted KL.
    Flipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VgaeConfig {
    pub hidden: usize,
    pub latent: usize,
    pub self_loops: bool,
    /// Negatives per positive edge.
    pub negatives: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub kl_weight: f64,
    pub loss_sign: LossSign,
    pub clip_bound: f64,
    /// Fixed gradient noise multiplier; calibrated from the budget when absent.
    pub noise_multiplier: Option<f64>,
}

impl Default for VgaeConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            latent: 16,
            self_loops: true,
            negatives: 5,
            batch_size: 2048,
            lr: 1e-3,
            epochs: 100,
            kl_weight: 1.0,
            loss_sign: LossSign::Standard,
            clip_bound: 1.0,
            noise_multiplier: None,
        }
    }
}

impl VgaeConfig {
    fn signed_kl(&self) -> f64 {
        match self.loss_sign {
            LossSign::Standard => self.kl_weight,
            LossSign::Flipped => -self.kl_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
    pub val_auc: Option<f64>,
    /// Mean per-example gradient norm before clipping.
    pub grad_norm: f64,
    /// Share of examples whose gradient was clipped.
    pub clipped: f64,
    pub iterations: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: VgaeConfig,
    pub privacy: Option<PrivacySpec>,
    pub examples: usize,
    pub steps_per_epoch: usize,
    pub total_steps: u64,
    pub epochs: Vec<EpochRecord>,
    pub ledger: AccountantLedger,
    pub best_epoch: Option<usize>,
    pub best_val_auc: Option<f64>,
    pub final_val_auc: Option<f64>,
}

impl TrainReport {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for e in &self.epochs {
            writeln!(w, "{}", serde_json::to_string(e)?).map_err(|err| Error::io(path, err))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub seed: u64,
    pub params: VgaeParams,
    /// Per-type input features the model was trained on.
    pub features: Vec<Array2<f64>>,
    pub privacy: Option<PrivacySpec>,
    pub ledger: AccountantLedger,
    pub config: VgaeConfig,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, serde_json::to_string(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Ingest {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "checkpoint schema version {} is not {}",
            ckpt.schema_version, CHECKPOINT_SCHEMA_VERSION
        )));
    }
    Ok(ckpt)
}

/// AUC of `mu_u . mu_v` on held-out pairs of the split's relation.
pub fn split_auc(graph: &HeteroGraph, mu: &Array2<f64>, split: &EdgeSplit, pos: &[(usize, usize)], neg: &[(usize, usize)]) -> Result<f64> {
    let rel = &graph.schema().relations[split.relation];
    let off = graph.type_offsets();
    let score = |&(s, d): &(usize, usize)| mu.row(off[rel.src] + s).dot(&mu.row(off[rel.dst] + d));
    let p: Vec<f64> = pos.iter().map(score).collect();
    let n: Vec<f64> = neg.iter().map(score).collect();
    link_prediction_auc(&p, &n)
}

/// DP-SGD training on the graph with the split's held-out edges removed.
/// `privacy = None` trains without clipping or noise.
pub fn train(
    graph: &HeteroGraph,
    split: &EdgeSplit,
    features: &[Array2<f64>],
    privacy: Option<&PrivacySpec>,
    config: &VgaeConfig,
    seed: u64,
) -> Result<(VgaeParams, TrainReport)> {
    if config.negatives == 0 || config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::Config("negatives, batch size and learning rate must be positive".into()));
    }
    let seeds = SeedTree::new(seed);
    let train_graph = graph.without_edges(split.relation, &split.held_out());
    let set = ChannelSet::build(&train_graph, config.self_loops);
    let x = stack_features(features)?;
    if x.nrows() != set.n_total {
        return Err(Error::Shape(format!("{} feature rows for {} nodes", x.nrows(), set.n_total)));
    }
    let mut params = VgaeParams::init(x.ncols(), config.hidden, config.latent, set.names(), &mut seeds.stream("vgae.init", 0))?;

    let relations = &train_graph.schema().relations;
    let mut positives: Vec<(usize, usize, usize)> = Vec::new();
    let mut edge_sets: Vec<HashSet<(usize, usize)>> = Vec::new();
    for r in 0..relations.len() {
        positives.extend(train_graph.edge_pairs(r).into_iter().map(|(s, d)| (r, s, d)));
        edge_sets.push(train_graph.edge_set(r));
    }
    let n_examples = positives.len();
    if n_examples == 0 {
        return Err(Error::DegenerateTask("no training edges".into()));
    }
    let batch = config.batch_size.min(n_examples);
    let steps_per_epoch = n_examples.div_ceil(batch);
    let total_steps = (config.epochs * steps_per_epoch) as u64;

    let (spec, clip, sigma) = match privacy {
        Some(p) => {
            let mut spec = p.clone();
            spec.clip_bound = config.clip_bound;
            spec.sampling_probability = (batch as f64 / n_examples as f64).min(1.0);
            spec.iterations = total_steps;
            spec.noise_multiplier = match config.noise_multiplier {
                Some(s) => s,
                None => calibrate_noise_multiplier(spec.epsilon_s, spec.delta, spec.c2, spec.sampling_probability, total_steps),
            };
            spec.validate()?;
            let verdict = accountant_feasible(&spec)?;
            if !verdict.feasible {
                return Err(Error::BudgetExceeded(format!(
                    "{total_steps} iterations requested, the accountant allows {} (sigma = {}, eps_s = {}, P = {})",
                    verdict.max_iterations, spec.noise_multiplier, spec.epsilon_s, spec.sampling_probability
                )));
            }
            let (c, s) = (spec.clip_bound, spec.noise_multiplier);
            (Some(spec), c, s)
        }
        None => (None, f64::INFINITY, 0.0),
    };

    let mut report = TrainReport {
        config: config.clone(),
        privacy: spec.clone(),
        examples: n_examples,
        steps_per_epoch,
        total_steps,
        epochs: Vec::new(),
        ledger: AccountantLedger::new(),
        best_epoch: None,
        best_val_auc: None,
        final_val_auc: None,
    };
    let pre = Precomputed::new(&set, &x);
    let mut ws = Workspace::new(&params, set.n_total);
    let off = &set.offsets;
    let kl_coef = config.signed_kl();
    let mut best = params.clone();
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..n_examples).collect();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut neg_rng = seeds.stream("vgae.negatives", epoch as u64);
        let mut negs_of: Vec<Vec<usize>> = vec![Vec::new(); n_examples];
        for (r, rel) in relations.iter().enumerate() {
            let idx: Vec<usize> = (0..n_examples).filter(|&i| positives[i].0 == r).collect();
            let pairs: Vec<(usize, usize)> = idx.iter().map(|&i| (positives[i].1, positives[i].2)).collect();
            let sampled = negative_sample(
                train_graph.num_nodes(rel.dst),
                rel.src == rel.dst,
                &pairs,
                &edge_sets[r],
                config.negatives,
                &mut neg_rng,
            )?;
            for (j, &i) in idx.iter().enumerate() {
                negs_of[i] = sampled[j * config.negatives..(j + 1) * config.negatives]
                    .iter()
                    .map(|&(_, v)| off[rel.dst] + v)
                    .collect();
            }
        }
        order.shuffle(&mut seeds.stream("vgae.order", epoch as u64));

        let (mut recon_sum, mut kl_sum) = (0.0, 0.0);
        let (mut norm_sum, mut n_clipped) = (0.0, 0usize);
        for chunk in order.chunks(batch) {
            if let Some(spec) = &spec {
                report.ledger.charge(spec)?;
            }
            let mut eps_rng = seeds.stream("vgae.reparam", step);
            let eps = Array2::from_shape_fn((set.n_total, config.latent), |_| StandardNormal.sample(&mut eps_rng));
            let cache = forward_cache(&set, &pre, &params);
            let mut acc = ClippedSum::new(params.len(), clip);
            for &i in chunk {
                let (r, s, d) = positives[i];
                let rel = &relations[r];
                let ex = Example {
                    u: off[rel.src] + s,
                    v: off[rel.dst] + d,
                    negs: negs_of[i].clone(),
                };
                let (rl, kl) = example_gradient(&set, &pre, &params, &cache, &eps, &ex, kl_coef, &mut ws);
                recon_sum += rl;
                kl_sum += kl;
                let norm = acc.add(&mut ws.grad)?;
                norm_sum += norm;
                n_clipped += usize::from(norm > clip);
            }
            let g = acc.finish(sigma, &mut seeds.stream("vgae.gradient_noise", step))?;
            for (p, gi) in params.data.iter_mut().zip(&g) {
                *p -= config.lr * gi;
            }
            if params.data.iter().any(|p| !p.is_finite()) {
                return Err(Error::Numeric(format!("parameters diverged at step {step}")));
            }
            step += 1;
        }
        let recon = recon_sum / n_examples as f64;
        let kl = kl_sum / n_examples as f64;
        let total = recon + kl_coef * kl;
        if !total.is_finite() {
            return Err(Error::Numeric(format!("loss became {total} at epoch {epoch}")));
        }
        let val_auc = if split.val.is_empty() {
            None
        } else {
            let latent = encode(&set, &x, &params)?;
            Some(split_auc(graph, &latent.mu, split, &split.val, &split.val_neg)?)
        };
        if let Some(a) = val_auc {
            if report.best_val_auc.is_none_or(|b| a > b) {
                report.best_val_auc = Some(a);
                report.best_epoch = Some(epoch);
                best = params.clone();
            }
        }
        report.final_val_auc = val_auc;
        report.epochs.push(EpochRecord {
            epoch,
            recon,
            kl,
            total,
            val_auc,
            grad_norm: norm_sum / n_examples as f64,
            clipped: n_clipped as f64 / n_examples as f64,
            iterations: report.ledger.iterations,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        log::debug!("epoch {epoch}: loss {total:.4} val auc {val_auc:?}");
    }
    if report.best_epoch.is_none() {
        best = params;
    }
    Ok((best, report))
}
