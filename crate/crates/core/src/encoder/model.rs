use ndarray::{Array2, ArrayView1, ArrayViewMut1};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::{data, data_mut, elu, elu_grad, leaky_relu, leaky_relu_grad, project, sigmoid, softmax, EncoderParams, EncoderPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct HeadCache {
    pub weights: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    /// `n x d` pre-activation neighbor sums.
    pub agg: Vec<f64>,
    /// Attention each node receives from the nodes attending to it.
    pub incoming: Vec<f64>,
}

pub(crate) fn head_forward(
    nbrs: &[Vec<usize>],
    z: &Array2<f64>,
    a_src: ArrayView1<f64>,
    a_dst: ArrayView1<f64>,
    head: usize,
) -> Result<HeadCache> {
    let d = a_src.len();
    let (n, width) = z.dim();
    if a_dst.len() != d || (head + 1) * d > width {
        return Err(Error::Shape(format!(
            "head {head} of width {d} does not fit {width} embedding columns"
        )));
    }
    if nbrs.len() != n {
        return Err(Error::Shape(format!("{} neighborhoods for {n} embedding rows", nbrs.len())));
    }
    let zs = data(z);
    let o = head * d;
    let dot = |u: usize, a: &ArrayView1<f64>| -> f64 { (0..d).map(|j| a[j] * zs[u * width + o + j]).sum() };
    let s: Vec<f64> = (0..n).map(|u| dot(u, &a_src)).collect();
    let t: Vec<f64> = (0..n).map(|u| dot(u, &a_dst)).collect();
    let mut weights = Vec::with_capacity(n);
    let mut pre_all = Vec::with_capacity(n);
    let mut agg = vec![0.0; n * d];
    let mut incoming = vec![0.0; n];
    for (u, nb) in nbrs.iter().enumerate() {
        if nb.is_empty() {
            return Err(Error::DegenerateNeighborhood(u));
        }
        if let Some(&v) = nb.iter().find(|&&v| v >= n) {
            return Err(Error::Shape(format!("neighbor {v} of node {u} has no embedding row")));
        }
        let pre: Vec<f64> = nb.iter().map(|&v| s[u] + t[v]).collect();
        let e: Vec<f64> = pre.iter().map(|&x| leaky_relu(x)).collect();
        let w = softmax(&e);
        let out = &mut agg[u * d..(u + 1) * d];
        for (&v, &wv) in nb.iter().zip(&w) {
            incoming[v] += wv;
            let row = &zs[v * width + o..v * width + o + d];
            for j in 0..d {
                out[j] += wv * row[j];
            }
        }
        weights.push(w);
        pre_all.push(pre);
    }
    Ok(HeadCache {
        weights,
        pre: pre_all,
        agg,
        incoming,
    })
}

/// One attention layer: every head, concatenated, plus `alpha`.
pub(crate) fn layer_forward(
    nbrs: &[Vec<usize>],
    z: &Array2<f64>,
    attn_src: &Array2<f64>,
    attn_dst: &Array2<f64>,
) -> Result<(Array2<f64>, Vec<f64>, Vec<HeadCache>)> {
    let (k, d) = attn_src.dim();
    if attn_dst.dim() != (k, d) || k * d != z.ncols() || k == 0 {
        return Err(Error::Shape(format!(
            "{k} heads of width {d} for {} embedding columns",
            z.ncols()
        )));
    }
    let n = z.nrows();
    let mut h = Array2::zeros((n, k * d));
    let mut incoming = vec![0.0; n];
    let mut heads = Vec::with_capacity(k);
    {
        let hs = data_mut(&mut h);
        for head in 0..k {
            let c = head_forward(nbrs, z, attn_src.row(head), attn_dst.row(head), head)?;
            for u in 0..n {
                for j in 0..d {
                    hs[u * k * d + head * d + j] = elu(c.agg[u * d + j]);
                }
                incoming[u] += c.incoming[u];
            }
            heads.push(c);
        }
    }
    let alpha = incoming.iter().map(|x| sigmoid(x / k as f64)).collect();
    Ok((h, alpha, heads))
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    /// Layer input before the per-path projection (layers after the first).
    pub input: Option<Array2<f64>>,
    pub z: Array2<f64>,
    pub heads: Vec<HeadCache>,
}

/// Encoder outputs for one node type.
#[derive(Debug, Clone)]
pub struct TypeForward {
    pub path_ids: Vec<usize>,
    pub per_path: Vec<Array2<f64>>,
    /// `alpha[m][u]`.
    pub alpha: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub beta: Vec<f64>,
    pub fused: Array2<f64>,
    pub(crate) caches: Vec<Vec<LayerCache>>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub projected: Vec<Array2<f64>>,
    pub(crate) masks: Vec<Option<Array2<f64>>>,
    pub types: Vec<TypeForward>,
}

/// Full encoder pass. With `dropout = Some((p, rng))`, projected embeddings
/// are zeroed with probability `p` and rescaled by `1/(1-p)`.
pub fn forward(
    plan: &EncoderPlan,
    features: &[Array2<f64>],
    params: &EncoderParams,
    mut dropout: Option<(f64, &mut ChaCha20Rng)>,
) -> Result<Forward> {
    if features.len() != plan.num_types() || params.w1.len() != plan.num_types() || params.paths.len() != plan.subgraphs.len() {
        return Err(Error::Shape("features, parameters and plan disagree on type or path counts".into()));
    }
    let mut projected = Vec::new();
    let mut masks = Vec::new();
    let mut types = Vec::new();
    for t in 0..plan.num_types() {
        let p = project(&features[t], &params.w1[t])?;
        if p.nrows() != plan.num_nodes[t] {
            return Err(Error::Shape(format!("type {t}: {} feature rows for {} nodes", p.nrows(), plan.num_nodes[t])));
        }
        let mask = match dropout.as_mut() {
            Some((rate, rng)) if *rate > 0.0 => {
                let keep = 1.0 - *rate;
                Some(Array2::from_shape_fn(p.dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }))
            }
            _ => None,
        };
        let x0 = match &mask {
            Some(m) => &p * m,
            None => p.clone(),
        };
        let mut per_path = Vec::new();
        let mut alpha = Vec::new();
        let mut caches = Vec::new();
        for &pid in &plan.by_type[t] {
            let nbrs = &plan.neighborhoods[pid];
            let pp = &params.paths[pid];
            let mut h = x0.clone();
            let mut layer_caches = Vec::new();
            let mut last_alpha = Vec::new();
            for l in 0..params.layers {
                let (input, z) = if l == 0 {
                    (None, h)
                } else {
                    let z = h.dot(&pp.layer_weights[l - 1]);
                    (Some(h), z)
                };
                let (out, a, heads) = layer_forward(nbrs, &z, &pp.attn_src[l], &pp.attn_dst[l])?;
                layer_caches.push(LayerCache { input, z, heads });
                last_alpha = a;
                h = out;
            }
            per_path.push(h);
            alpha.push(last_alpha);
            caches.push(layer_caches);
        }
        let views: Vec<&Array2<f64>> = per_path.iter().collect();
        let scores = super::semantic_scores(&views, params.w2[t].view(), params.b[t])?;
        let beta = softmax(&scores);
        let fused = super::fuse(&views, &beta)?;
        types.push(TypeForward {
            path_ids: plan.by_type[t].clone(),
            per_path,
            alpha,
            scores,
            beta,
            fused,
            caches,
        });
        projected.push(p);
        masks.push(mask);
    }
    Ok(Forward { projected, masks, types })
}

#[allow(clippy::too_many_arguments)]
fn head_backward(
    nbrs: &[Vec<usize>],
    z: &Array2<f64>,
    a_src: ArrayView1<f64>,
    a_dst: ArrayView1<f64>,
    head: usize,
    cache: &HeadCache,
    dout: &Array2<f64>,
    dz: &mut Array2<f64>,
    mut da_src: ArrayViewMut1<f64>,
    mut da_dst: ArrayViewMut1<f64>,
) {
    let d = a_src.len();
    let (n, width) = z.dim();
    let o = head * d;
    let zs = data(z);
    let douts = data(dout);
    let dzs = data_mut(dz);
    let mut ds = vec![0.0; n];
    let mut dt = vec![0.0; n];
    let mut dagg = vec![0.0; d];
    for (u, nb) in nbrs.iter().enumerate() {
        for j in 0..d {
            dagg[j] = douts[u * width + o + j] * elu_grad(cache.agg[u * d + j]);
        }
        let w = &cache.weights[u];
        let mut dw = Vec::with_capacity(nb.len());
        for (&v, &wv) in nb.iter().zip(w) {
            let base = v * width + o;
            let mut acc = 0.0;
            for j in 0..d {
                acc += dagg[j] * zs[base + j];
                dzs[base + j] += wv * dagg[j];
            }
            dw.push(acc);
        }
        let dot: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
        for (i, &v) in nb.iter().enumerate() {
            let dpre = w[i] * (dw[i] - dot) * leaky_relu_grad(cache.pre[u][i]);
            ds[u] += dpre;
            dt[v] += dpre;
        }
    }
    for u in 0..n {
        let base = u * width + o;
        for j in 0..d {
            let zj = zs[base + j];
            da_src[j] += ds[u] * zj;
            da_dst[j] += dt[u] * zj;
            dzs[base + j] += ds[u] * a_src[j] + dt[u] * a_dst[j];
        }
    }
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient `dfused[t]` on each type's fused embeddings.
pub fn backward(
    plan: &EncoderPlan,
    features: &[Array2<f64>],
    params: &EncoderParams,
    fwd: &Forward,
    dfused: &[Array2<f64>],
) -> Result<EncoderParams> {
    let mut grads = params.zeros_like();
    for (t, tf) in fwd.types.iter().enumerate() {
        if dfused[t].dim() != tf.fused.dim() {
            return Err(Error::Shape(format!("type {t}: gradient shape {:?} vs {:?}", dfused[t].dim(), tf.fused.dim())));
        }
        let n = tf.fused.nrows();
        let m_count = tf.per_path.len();
        let dbeta: Vec<f64> = tf.per_path.iter().map(|z| (z * &dfused[t]).sum()).collect();
        let mean: f64 = tf.beta.iter().zip(&dbeta).map(|(b, g)| b * g).sum();
        let dscore: Vec<f64> = tf.beta.iter().zip(&dbeta).map(|(b, g)| b * (g - mean)).collect();
        let w2 = &params.w2[t];
        let mut dx0: Array2<f64> = Array2::zeros(fwd.projected[t].dim());
        for m in 0..m_count {
            let z = &tf.per_path[m];
            let mut dout = dfused[t].clone() * tf.beta[m];
            if n > 0 {
                for u in 0..n {
                    let row = z.row(u);
                    let q = row.dot(w2) + params.b[t];
                    let g = leaky_relu_grad(q) * dscore[m] / n as f64;
                    grads.w2[t].scaled_add(g, &row);
                    grads.b[t] += g;
                    dout.row_mut(u).scaled_add(g, w2);
                }
            }
            let pid = tf.path_ids[m];
            let pp = &params.paths[pid];
            let nbrs = &plan.neighborhoods[pid];
            for l in (0..params.layers).rev() {
                let lc = &tf.caches[m][l];
                let mut dz = Array2::zeros(lc.z.dim());
                let gp = &mut grads.paths[pid];
                for head in 0..params.heads {
                    head_backward(
                        nbrs,
                        &lc.z,
                        pp.attn_src[l].row(head),
                        pp.attn_dst[l].row(head),
                        head,
                        &lc.heads[head],
                        &dout,
                        &mut dz,
                        gp.attn_src[l].row_mut(head),
                        gp.attn_dst[l].row_mut(head),
                    );
                }
                match &lc.input {
                    Some(input) => {
                        gp.layer_weights[l - 1] += &input.t().dot(&dz);
                        dout = dz.dot(&pp.layer_weights[l - 1].t());
                    }
                    None => dx0 += &dz,
                }
            }
        }
        let dp = match &fwd.masks[t] {
            Some(mask) => dx0 * mask,
            None => dx0,
        };
        grads.w1[t] = features[t].t().dot(&dp);
    }
    Ok(grads)
}
