use std::collections::HashSet;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::dp::PrivacySpec;
use crate::graph::{split_edges, Edge, EdgeSplit, NodeRef, Schema};
use crate::rng::SeedTree;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = SeedTree::new(seed).stream("m", 0);
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
}

/// Users `u0..u5`, items `i0..i7`; relation `ui` (user to item) and `uu` (user to user).
fn toy_graph() -> HeteroGraph {
    let mut s = Schema::default();
    s.add_node_type("user").unwrap();
    s.add_node_type("item").unwrap();
    s.add_relation("ui", "user", "item").unwrap();
    s.add_relation("uu", "user", "user").unwrap();
    let ui = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 3), (3, 3), (3, 4), (4, 5), (5, 6), (5, 7), (2, 7), (4, 0)];
    let uu = [(0, 1), (2, 3), (4, 5), (1, 3)];
    let ids = vec![(0..6).map(|i| format!("u{i}")).collect(), (0..8).map(|i| format!("i{i}")).collect()];
    let edges = vec![
        ui.iter().map(|&(a, b)| Edge { src: NodeRef::new(0, a), dst: NodeRef::new(1, b) }).collect(),
        uu.iter().map(|&(a, b)| Edge { src: NodeRef::new(0, a), dst: NodeRef::new(0, b) }).collect(),
    ];
    HeteroGraph::new(s, ids, vec![None, None], edges).unwrap()
}

fn params_for(set: &ChannelSet, f: usize, h: usize, l: usize, seed: u64) -> VgaeParams {
    VgaeParams::init(f, h, l, set.names(), &mut SeedTree::new(seed).stream("p", 0)).unwrap()
}

#[test]
fn channels_cover_both_directions() {
    let g = toy_graph();
    let set = ChannelSet::build(&g, true);
    assert_eq!(set.names(), vec!["ui:fwd", "ui:inv", "uu:fwd", "uu:inv", "self"]);
    let fwd = &set.channels[0];
    // item i3 (global 9) hears from users 2 and 3
    assert_eq!(fwd.nbrs[fwd.row_of(9).unwrap()], vec![2, 3]);
    let inv = &set.channels[1];
    assert_eq!(inv.nbrs[inv.row_of(0).unwrap()], vec![6, 7]);
    assert!(fwd.row_of(0).is_none());
}

#[test]
fn layer_single_neighbor_identity_weight() {
    let mut s = Schema::default();
    s.add_node_type("a").unwrap();
    s.add_node_type("b").unwrap();
    s.add_relation("r", "a", "b").unwrap();
    let g = HeteroGraph::new(
        s,
        vec![vec!["a0".into()], vec!["b0".into()]],
        vec![None, None],
        vec![vec![Edge { src: NodeRef::new(0, 0), dst: NodeRef::new(1, 0) }]],
    )
    .unwrap();
    let set = ChannelSet::build(&g, false);
    let h = array![[-1.0, 2.0], [0.5, 0.5]];
    let eye = Array2::eye(2);
    let zero = Array2::zeros((2, 2));
    let out = hetegcn_layer(&set, &h, &[eye.view(), zero.view()], true).unwrap();
    assert_eq!(out.row(1).to_vec(), vec![0.0, 2.0]);
    assert_eq!(out.row(0).to_vec(), vec![0.0, 0.0]);
    let zeros = hetegcn_layer(&set, &h, &[zero.view(), zero.view()], false).unwrap();
    assert!(zeros.iter().all(|&x| x == 0.0));
    assert!(matches!(hetegcn_layer(&set, &h, &[eye.view()], true), Err(Error::Config(_))));
}

/// Scalar loop over edges, independent of the channel tables.
fn oracle_layer(g: &HeteroGraph, h: &Array2<f64>, w: &[Array2<f64>], self_w: Option<&Array2<f64>>, relu: bool) -> Array2<f64> {
    let off = g.type_offsets();
    let n = g.total_nodes();
    let d_out = w[0].ncols();
    let mut out = Array2::<f64>::zeros((n, d_out));
    for r in 0..g.schema().relations.len() {
        let rel = &g.schema().relations[r];
        for (dir, wm) in [(0, &w[2 * r]), (1, &w[2 * r + 1])] {
            let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
            for &(s, d) in &g.edge_pairs(r) {
                let (a, b) = (off[rel.src] + s, off[rel.dst] + d);
                if dir == 0 {
                    lists[b].push(a);
                } else {
                    lists[a].push(b);
                }
            }
            for u in 0..n {
                if lists[u].is_empty() {
                    continue;
                }
                for j in 0..d_out {
                    let mut acc = 0.0;
                    for &v in &lists[u] {
                        for k in 0..h.ncols() {
                            acc += h[[v, k]] * wm[[k, j]];
                        }
                    }
                    out[[u, j]] += acc / lists[u].len() as f64;
                }
            }
        }
    }
    if let Some(sw) = self_w {
        for u in 0..n {
            for j in 0..d_out {
                for k in 0..h.ncols() {
                    out[[u, j]] += h[[u, k]] * sw[[k, j]];
                }
            }
        }
    }
    if relu {
        out.mapv_inplace(|x| x.max(0.0));
    }
    out
}

#[test]
fn layer_and_encode_match_scalar_loops() {
    let g = toy_graph();
    let set = ChannelSet::build(&g, true);
    let x = random_matrix(14, 3, 1);
    let p = params_for(&set, 3, 4, 2, 2);
    let w1: Vec<Array2<f64>> = (0..5).map(|c| p.w1(c).to_owned()).collect();
    let h1 = oracle_layer(&g, &x, &w1[..4], Some(&w1[4]), true);
    let views: Vec<_> = (0..5).map(|c| p.w1(c)).collect();
    let got = hetegcn_layer(&set, &x, &views, true).unwrap();
    assert!((&got - &h1).iter().all(|d| d.abs() < 1e-12));
    let wm: Vec<Array2<f64>> = (0..5).map(|c| p.w_mu(c).to_owned()).collect();
    let ws: Vec<Array2<f64>> = (0..5).map(|c| p.w_sigma(c).to_owned()).collect();
    let mu = oracle_layer(&g, &h1, &wm[..4], Some(&wm[4]), false);
    let ls = oracle_layer(&g, &h1, &ws[..4], Some(&ws[4]), false);
    let latent = encode(&set, &x, &p).unwrap();
    assert!((&latent.mu - &mu).iter().all(|d| d.abs() < 1e-12));
    assert!((&latent.logvar - &ls.mapv(|s| 2.0 * s)).iter().all(|d| d.abs() < 1e-12));
    assert_eq!(encode(&set, &x, &p).unwrap(), latent);
    let zero = encode(&set, &Array2::zeros((14, 3)), &p).unwrap();
    assert!(zero.mu.iter().all(|&m| m == 0.0));
}

#[test]
fn reparameterization_examples() {
    let mu = random_matrix(3, 2, 3);
    let collapsed = LatentState { mu: mu.clone(), logvar: Array2::from_elem((3, 2), f64::NEG_INFINITY) };
    assert_eq!(reparameterize(&collapsed, &mut SeedTree::new(1).stream("r", 0)), mu);
    let unit = LatentState { mu: Array2::zeros((100_000, 1)), logvar: Array2::zeros((100_000, 1)) };
    let z = reparameterize(&unit, &mut SeedTree::new(2).stream("r", 0));
    let n = z.len() as f64;
    let mean = z.sum() / n;
    let std = (z.mapv(|v| (v - mean).powi(2)).sum() / (n - 1.0)).sqrt();
    assert!((std - 1.0).abs() < 0.01, "{std}");
    let again = reparameterize(&unit, &mut SeedTree::new(2).stream("r", 0));
    assert_eq!(z, again);
}

#[test]
fn decode_examples() {
    assert_eq!(decode(&[1.0, -1.0], &[1.0, 1.0]), 0.5);
    assert!((decode(&[3f64.ln()], &[1.0]) - 0.75).abs() < 1e-15);
    let (a, b) = (random_matrix(1, 4, 5), random_matrix(1, 4, 6));
    let (a, b) = (a.row(0).to_vec(), b.row(0).to_vec());
    assert_eq!(decode(&a, &b), decode(&b, &a));
}

#[test]
fn negative_sampling_examples() {
    let positives = vec![(0, 1), (1, 2), (2, 0)];
    let all: HashSet<_> = positives.iter().copied().collect();
    let mut rng = SeedTree::new(0).stream("n", 0);
    let negs = negative_sample(10, false, &positives, &all, 5, &mut rng).unwrap();
    assert_eq!(negs.len(), 15);
    assert!(negs.iter().all(|p| !all.contains(p)));
    for (i, chunk) in negs.chunks(5).enumerate() {
        assert!(chunk.iter().all(|&(u, _)| u == positives[i].0));
    }
    let complete: HashSet<_> = (0..2).flat_map(|u| (0..3).map(move |v| (u, v))).collect();
    let pos: Vec<_> = complete.iter().copied().collect();
    assert!(matches!(negative_sample(3, false, &pos, &complete, 1, &mut rng), Err(Error::Sampling(_))));
    let again = negative_sample(10, false, &positives, &all, 5, &mut SeedTree::new(0).stream("n", 0)).unwrap();
    assert_eq!(negs, again);
}

#[test]
fn recon_loss_examples() {
    let l = recon_loss(&[0.0], &[0.0], 1).unwrap();
    assert!((l - 2.0 * 2f64.ln()).abs() < 1e-15);
    assert!(recon_loss(&[800.0], &[-800.0, -900.0], 2).unwrap() < 1e-300);
    let (pos, neg) = ([0.3, -1.2], [0.5, -0.1, 2.0, 0.7]);
    let mut expect = 0.0;
    for q in pos {
        expect -= (1.0 / (1.0 + f64::exp(-q))).ln();
    }
    for p in neg {
        expect -= (1.0 / (1.0 + f64::exp(p))).ln();
    }
    assert!((recon_loss(&pos, &neg, 2).unwrap() - expect / 2.0).abs() < 1e-12);
    assert!(recon_loss(&pos, &neg, 3).is_err());
}

#[test]
fn kl_examples() {
    let zero = LatentState { mu: Array2::zeros((2, 3)), logvar: Array2::zeros((2, 3)) };
    assert_eq!(kl_loss(&zero), 0.0);
    let one = LatentState { mu: array![[1.0]], logvar: array![[0.0]] };
    assert_eq!(kl_loss(&one), 0.5);
}

proptest! {
    #[test]
    fn kl_is_nonnegative(seed in 0u64..10_000) {
        let mu = random_matrix(4, 3, seed);
        let logvar = random_matrix(4, 3, seed + 1);
        let latent = LatentState { mu, logvar };
        prop_assert!(kl_loss(&latent) >= 0.0);
    }

    #[test]
    fn decode_is_bounded_and_symmetric(seed in 0u64..10_000) {
        let z = random_matrix(2, 4, seed);
        let (a, b) = (z.row(0).to_vec(), z.row(1).to_vec());
        let p = decode(&a, &b);
        prop_assert!(p > 0.0 && p < 1.0);
        prop_assert_eq!(p, decode(&b, &a));
    }
}

fn toy_examples(set: &ChannelSet) -> Vec<Example> {
    let _ = set;
    vec![
        Example { u: 0, v: 6, negs: vec![8, 9, 13] },
        Example { u: 3, v: 9, negs: vec![6, 6, 12] },
        Example { u: 1, v: 3, negs: vec![5, 2, 0] },
        Example { u: 5, v: 12, negs: vec![7, 11, 10] },
    ]
}

#[test]
fn gradient_matches_central_differences() {
    let g = toy_graph();
    for (self_loops, kl) in [(true, 1.0), (false, -0.5)] {
        let set = ChannelSet::build(&g, self_loops);
        let x = random_matrix(14, 3, 7);
        let p = params_for(&set, 3, 5, 3, 8);
        let eps = random_matrix(14, 3, 9);
        let ex = toy_examples(&set);
        let analytic = batch_gradient(&set, &x, &p, &ex, &eps, kl).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus.data[i] += h;
            let mut minus = p.clone();
            minus.data[i] -= h;
            let num = (objective(&set, &x, &plus, &ex, &eps, kl).unwrap() - objective(&set, &x, &minus, &ex, &eps, kl).unwrap()) / (2.0 * h);
            let scale = num.abs().max(analytic[i].abs()).max(1e-3);
            worst = worst.max((num - analytic[i]).abs() / scale);
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
    }
}

fn toy_split(g: &HeteroGraph) -> EdgeSplit {
    split_edges(g, 0, (0.75, 0.125, 0.125), 3).unwrap()
}

fn features(seed: u64) -> Vec<Array2<f64>> {
    vec![random_matrix(6, 4, seed), random_matrix(8, 4, seed + 1)]
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let g = toy_graph();
    let config = VgaeConfig { epochs: 0, hidden: 4, latent: 2, ..VgaeConfig::default() };
    let (p, report) = train(&g, &toy_split(&g), &features(1), None, &config, 5).unwrap();
    let set = ChannelSet::build(&g, true);
    assert!(report.epochs.is_empty());
    let init = VgaeParams::init(4, 4, 2, set.names(), &mut SeedTree::new(5).stream("vgae.init", 0)).unwrap();
    assert_eq!(p, init);
}

#[test]
fn noiseless_training_is_bit_reproducible_and_descends() {
    let g = toy_graph();
    let config = VgaeConfig { epochs: 60, hidden: 8, latent: 4, batch_size: 4, lr: 0.05, kl_weight: 0.01, ..VgaeConfig::default() };
    let split = toy_split(&g);
    let (a, ra) = train(&g, &split, &features(2), None, &config, 9).unwrap();
    let (b, rb) = train(&g, &split, &features(2), None, &config, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.epochs.iter().map(|e| e.total).collect::<Vec<_>>(), rb.epochs.iter().map(|e| e.total).collect::<Vec<_>>());
    let window = |s: usize| ra.epochs[s..s + 10].iter().map(|e| e.total).sum::<f64>() / 10.0;
    assert!(window(50) < window(10));
}

#[test]
fn private_training_respects_the_accountant() {
    let g = toy_graph();
    let split = toy_split(&g);
    let spec = PrivacySpec::new(0.5, 0.5, 1e-5).unwrap();
    let config = VgaeConfig { epochs: 3, hidden: 4, latent: 2, batch_size: 4, ..VgaeConfig::default() };
    let (_, report) = train(&g, &split, &features(3), Some(&spec), &config, 1).unwrap();
    assert!(report.ledger.within_budget);
    assert_eq!(report.ledger.iterations, report.total_steps);
    let used = report.privacy.unwrap();
    assert_eq!(used.epsilon_f + used.epsilon_s, used.epsilon);
    let starved = VgaeConfig { noise_multiplier: Some(1e-3), ..config };
    assert!(matches!(train(&g, &split, &features(3), Some(&spec), &starved, 1), Err(Error::BudgetExceeded(_))));
}
