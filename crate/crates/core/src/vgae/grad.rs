//! Sparse per-example gradients of the link objective.
//!
//! One example is a positive pair plus its negatives. Its loss touches only
//! the latent rows of those nodes, so the backward pass walks back through
//! their two-hop channel neighborhoods instead of the whole graph.

use ndarray::Array2;

use super::{logistic, softplus_neg, ChannelSet, VgaeParams, LOG_SIGMA_BOUND};
use crate::error::{Error, Result};

/// Positive pair `(u, v)` and negatives `(u, n)`, all global node ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub u: usize,
    pub v: usize,
    pub negs: Vec<usize>,
}

/// First-layer channel aggregates of the fixed input features.
#[derive(Debug, Clone)]
pub(crate) struct Precomputed {
    pub agg1: Vec<Array2<f64>>,
}

impl Precomputed {
    pub fn new(set: &ChannelSet, x: &Array2<f64>) -> Self {
        Self {
            agg1: set.channels.iter().map(|c| c.aggregate(x)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Cache {
    pub pre1: Array2<f64>,
    pub agg2: Vec<Array2<f64>>,
    pub mu: Array2<f64>,
    pub logsig: Array2<f64>,
    pub logsig_active: Array2<bool>,
}

pub(crate) fn forward_cache(set: &ChannelSet, pre: &Precomputed, params: &VgaeParams) -> Cache {
    let n = set.n_total;
    let mut pre1 = Array2::zeros((n, params.hidden));
    for (c, ch) in set.channels.iter().enumerate() {
        let msg = pre.agg1[c].dot(&params.w1(c));
        for (r, &u) in ch.rows.iter().enumerate() {
            let mut row = pre1.row_mut(u);
            row += &msg.row(r);
        }
    }
    let h1 = pre1.mapv(|x: f64| x.max(0.0));
    let agg2: Vec<Array2<f64>> = set.channels.iter().map(|ch| ch.aggregate(&h1)).collect();
    let mut mu = Array2::zeros((n, params.latent));
    let mut raw = Array2::zeros((n, params.latent));
    for (c, ch) in set.channels.iter().enumerate() {
        let m = agg2[c].dot(&params.w_mu(c));
        let s = agg2[c].dot(&params.w_sigma(c));
        for (r, &u) in ch.rows.iter().enumerate() {
            let mut row = mu.row_mut(u);
            row += &m.row(r);
            let mut row = raw.row_mut(u);
            row += &s.row(r);
        }
    }
    let logsig_active = raw.mapv(|s: f64| s.abs() < LOG_SIGMA_BOUND);
    let logsig = raw.mapv(|s: f64| s.clamp(-LOG_SIGMA_BOUND, LOG_SIGMA_BOUND));
    Cache {
        pre1,
        agg2,
        mu,
        logsig,
        logsig_active,
    }
}

/// Reusable scratch buffers for [`example_gradient`].
#[derive(Debug, Clone)]
pub struct Workspace {
    pub grad: Vec<f64>,
    dh1: Array2<f64>,
    touched: Vec<usize>,
    flag: Vec<bool>,
}

impl Workspace {
    pub fn new(params: &VgaeParams, n_total: usize) -> Self {
        Self {
            grad: vec![0.0; params.len()],
            dh1: Array2::zeros((n_total, params.hidden)),
            touched: Vec::new(),
            flag: vec![false; n_total],
        }
    }
}

struct NodeGrad {
    node: usize,
    z: Vec<f64>,
    dmu: Vec<f64>,
    ds: Vec<f64>,
}

/// Loss terms `(reconstruction, KL)` of one example.
fn example_terms(cache: &Cache, eps: &Array2<f64>, ex: &Example, kl_weight: f64, want_grad: bool) -> (f64, f64, Vec<NodeGrad>) {
    let latent = cache.mu.ncols();
    let mut nodes: Vec<NodeGrad> = Vec::with_capacity(2 + ex.negs.len());
    let index = |y: usize, nodes: &mut Vec<NodeGrad>| -> usize {
        if let Some(i) = nodes.iter().position(|g| g.node == y) {
            return i;
        }
        let z = (0..latent)
            .map(|j| cache.mu[[y, j]] + cache.logsig[[y, j]].exp() * eps[[y, j]])
            .collect();
        nodes.push(NodeGrad {
            node: y,
            z,
            dmu: vec![0.0; latent],
            ds: vec![0.0; latent],
        });
        nodes.len() - 1
    };
    let iu = index(ex.u, &mut nodes);
    let iv = index(ex.v, &mut nodes);
    let mut recon = 0.0;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut pairs = vec![(iv, true)];
    for &n in &ex.negs {
        pairs.push((index(n, &mut nodes), false));
    }
    for (i, positive) in pairs {
        let s = dot(&nodes[iu].z, &nodes[i].z);
        let (loss, g) = if positive {
            (softplus_neg(s), logistic(s) - 1.0)
        } else {
            (softplus_neg(-s), logistic(s))
        };
        recon += loss;
        if want_grad {
            let (zu, zi) = (nodes[iu].z.clone(), nodes[i].z.clone());
            for j in 0..latent {
                nodes[iu].dmu[j] += g * zi[j];
                nodes[i].dmu[j] += g * zu[j];
            }
        }
    }
    // dmu holds dL/dz so far; route it to mu and log sigma.
    if want_grad {
        for g in &mut nodes {
            for j in 0..latent {
                if cache.logsig_active[[g.node, j]] {
                    g.ds[j] = g.dmu[j] * eps[[g.node, j]] * cache.logsig[[g.node, j]].exp();
                }
            }
        }
    }
    let mut kl = 0.0;
    for i in [iu, iv] {
        let y = nodes[i].node;
        for j in 0..latent {
            let (m, s) = (cache.mu[[y, j]], cache.logsig[[y, j]]);
            kl += 0.5 * (m * m + (2.0 * s).exp() - 1.0 - 2.0 * s);
            if want_grad {
                nodes[i].dmu[j] += kl_weight * m;
                if cache.logsig_active[[y, j]] {
                    nodes[i].ds[j] += kl_weight * ((2.0 * s).exp() - 1.0);
                }
            }
        }
    }
    (recon, kl, nodes)
}

/// Writes the gradient of `recon + kl_weight * kl` for one example into
/// `ws.grad` and returns `(recon, kl)`.
pub(crate) fn example_gradient(
    set: &ChannelSet,
    pre: &Precomputed,
    params: &VgaeParams,
    cache: &Cache,
    eps: &Array2<f64>,
    ex: &Example,
    kl_weight: f64,
    ws: &mut Workspace,
) -> (f64, f64) {
    let (h, l, f) = (params.hidden, params.latent, params.input_dim);
    ws.grad.iter_mut().for_each(|g| *g = 0.0);
    let (recon, kl, nodes) = example_terms(cache, eps, ex, kl_weight, true);
    let mut dagg = vec![0.0; h];
    for g in &nodes {
        for (c, ch) in set.channels.iter().enumerate() {
            let Some(r) = ch.row_of(g.node) else { continue };
            let a = pre_row(&cache.agg2[c], r);
            let (wm, wsg) = (params.w_mu(c), params.w_sigma(c));
            let mr = params.mu_range(c);
            let sr = params.sigma_range(c);
            for i in 0..h {
                let ai = a[i];
                let mut acc = 0.0;
                for j in 0..l {
                    if ai != 0.0 {
                        ws.grad[mr.start + i * l + j] += ai * g.dmu[j];
                        ws.grad[sr.start + i * l + j] += ai * g.ds[j];
                    }
                    acc += wm[[i, j]] * g.dmu[j] + wsg[[i, j]] * g.ds[j];
                }
                dagg[i] = acc;
            }
            let zeta = 1.0 / ch.nbrs[r].len() as f64;
            for &w in &ch.nbrs[r] {
                if !ws.flag[w] {
                    ws.flag[w] = true;
                    ws.touched.push(w);
                }
                let mut row = ws.dh1.row_mut(w);
                for i in 0..h {
                    row[i] += zeta * dagg[i];
                }
            }
        }
    }
    let mut dpre = vec![0.0; h];
    for &w in &ws.touched {
        let mut any = false;
        for i in 0..h {
            dpre[i] = if cache.pre1[[w, i]] > 0.0 { ws.dh1[[w, i]] } else { 0.0 };
            any |= dpre[i] != 0.0;
        }
        ws.dh1.row_mut(w).fill(0.0);
        ws.flag[w] = false;
        if !any {
            continue;
        }
        for (c, ch) in set.channels.iter().enumerate() {
            let Some(r) = ch.row_of(w) else { continue };
            let a = pre_row(&pre.agg1[c], r);
            let start = params.w1_range(c).start;
            for k in 0..f {
                let ak = a[k];
                if ak == 0.0 {
                    continue;
                }
                let block = &mut ws.grad[start + k * h..start + (k + 1) * h];
                for i in 0..h {
                    block[i] += ak * dpre[i];
                }
            }
        }
    }
    ws.touched.clear();
    (recon, kl)
}

fn pre_row(a: &Array2<f64>, r: usize) -> &[f64] {
    let w = a.ncols();
    &a.as_slice().expect("standard layout")[r * w..(r + 1) * w]
}

fn check_examples(set: &ChannelSet, eps: &Array2<f64>, params: &VgaeParams, examples: &[Example]) -> Result<()> {
    params.check_channels(set)?;
    if eps.dim() != (set.n_total, params.latent) {
        return Err(Error::Shape(format!("reparameterization noise {:?} for {} nodes", eps.dim(), set.n_total)));
    }
    if examples.iter().any(|e| e.u >= set.n_total || e.v >= set.n_total || e.negs.iter().any(|&n| n >= set.n_total)) {
        return Err(Error::Argument("example refers to a node outside the graph".into()));
    }
    Ok(())
}

/// Per-example `(reconstruction, KL)` under fixed reparameterization noise.
pub fn example_losses(set: &ChannelSet, x: &Array2<f64>, params: &VgaeParams, examples: &[Example], eps: &Array2<f64>) -> Result<Vec<(f64, f64)>> {
    check_examples(set, eps, params, examples)?;
    let cache = forward_cache(set, &Precomputed::new(set, x), params);
    Ok(examples
        .iter()
        .map(|ex| {
            let (r, k, _) = example_terms(&cache, eps, ex, 0.0, false);
            (r, k)
        })
        .collect())
}

/// Mean per-example objective `recon + kl_weight * kl`.
pub fn objective(set: &ChannelSet, x: &Array2<f64>, params: &VgaeParams, examples: &[Example], eps: &Array2<f64>, kl_weight: f64) -> Result<f64> {
    let terms = example_losses(set, x, params, examples, eps)?;
    Ok(terms.iter().map(|(r, k)| r + kl_weight * k).sum::<f64>() / examples.len().max(1) as f64)
}

/// Unclipped mean gradient of [`objective`].
pub fn batch_gradient(set: &ChannelSet, x: &Array2<f64>, params: &VgaeParams, examples: &[Example], eps: &Array2<f64>, kl_weight: f64) -> Result<Vec<f64>> {
    check_examples(set, eps, params, examples)?;
    let pre = Precomputed::new(set, x);
    let cache = forward_cache(set, &pre, params);
    let mut ws = Workspace::new(params, set.n_total);
    let mut total = vec![0.0; params.len()];
    for ex in examples {
        example_gradient(set, &pre, params, &cache, eps, ex, kl_weight, &mut ws);
        for (t, g) in total.iter_mut().zip(&ws.grad) {
            *t += g;
        }
    }
    let n = examples.len().max(1) as f64;
    total.iter_mut().for_each(|t| *t /= n);
    Ok(total)
}
