//! Acceptance criteria, one PASS/FAIL line each.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use hetero_dp::allocator::{allocate_with_pipeline, RowStatus};
use hetero_dp::config::RunConfig;
use hetero_dp::dp::{clip_gradient, empirical_privacy_audit, gaussian_mechanism, gaussian_sigma, l2_norm, AuditConfig};
use hetero_dp::eval::{
    curve, link_prediction_auc, quadrilateral_counts, run_ablation, run_epsilon_sweep, AblationArm, MetricsRecord, RunStatus, SweepOptions,
};
use hetero_dp::graph::{enumerate_walk_pairs, extract_semantic_subgraph, load_dataset, synthetic, Edge, HeteroGraph, NodeRef, Schema};
use hetero_dp::pipeline::{load_graph, run_pipeline};
use hetero_dp::rng::SeedTree;
use hetero_dp::vgae::{batch_gradient, objective, ChannelSet, Example, VgaeParams};

struct Outcome {
    id: u32,
    pass: Option<bool>,
    detail: String,
}

fn report(outcomes: &mut Vec<Outcome>, id: u32, pass: Option<bool>, detail: String) {
    let tag = match pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    let _ = writeln!(std::io::stdout(), "[{tag}] criterion {id:>2}: {detail}");
    outcomes.push(Outcome { id, pass, detail });
}

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn preset() -> RunConfig {
    RunConfig::load(&manifest().join("configs/synthetic.cfg")).unwrap()
}

fn c1() -> (bool, String) {
    let t = Instant::now();
    let mut rng = SeedTree::new(1).stream("acceptance", 1);
    let out = gaussian_mechanism(&vec![0.0; 1_000_000], 1.0, 2.0, &mut rng).unwrap();
    let n = out.len() as f64;
    let mean = out.iter().sum::<f64>() / n;
    let std = (out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let secs = t.elapsed().as_secs_f64();
    let ok = (1.98..=2.02).contains(&std) && mean.abs() <= 0.006 && secs < 10.0;
    (ok, format!("std {std:.4}, mean {mean:+.5}, {secs:.2}s"))
}

fn c2() -> (bool, String) {
    // sqrt(2 ln(1.25e5)) / 0.5 at 40 digits.
    let oracle = 9.689_610_525_210_78;
    let s = gaussian_sigma(0.5, 1e-5, 1.0).unwrap();
    let mut rng = SeedTree::new(2).stream("acceptance", 2);
    let mut monotone = true;
    for _ in 0..100 {
        let a: f64 = rng.random_range(1e-3..0.999);
        let b: f64 = rng.random_range(1e-3..0.999);
        let delta = 10f64.powf(rng.random_range(-9.0..-2.0));
        let sens = rng.random_range(0.01..10.0);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        monotone &= gaussian_sigma(lo, delta, sens).unwrap() >= gaussian_sigma(hi, delta, sens).unwrap();
    }
    let ok = (s - 9.690).abs() <= 0.001 && (s - oracle).abs() <= 1e-12 && monotone;
    (ok, format!("sigma {s:.6} (oracle {oracle:.6}), monotone over 100 triples: {monotone}"))
}

fn c3() -> (bool, String) {
    let mut rng = SeedTree::new(3).stream("acceptance", 3);
    let (mut worst_excess, mut worst_cos) = (f64::NEG_INFINITY, 1.0f64);
    let mut ok = true;
    for _ in 0..10_000 {
        let d = rng.random_range(1..64);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let v: Vec<f64> = (0..d).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z }).collect();
        let c = 10f64.powf(rng.random_range(-3.0..2.0));
        let out = clip_gradient(&v, c);
        let norm = l2_norm(&out);
        ok &= norm <= c;
        worst_excess = worst_excess.max(norm - c);
        let dot: f64 = v.iter().zip(&out).map(|(a, b)| a * b).sum();
        let cos = dot / (l2_norm(&v) * norm);
        worst_cos = worst_cos.min(cos);
    }
    ok &= worst_cos >= 1.0 - 1e-12;
    (ok, format!("max norm - C {worst_excess:.3e}, min cosine {worst_cos:.15}"))
}

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

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = SeedTree::new(seed).stream("acceptance.matrix", 0);
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
}

fn c4() -> (bool, String) {
    let t = Instant::now();
    let g = toy_graph();
    let set = ChannelSet::build(&g, true);
    let x = normal_matrix(14, 3, 7);
    let eps = normal_matrix(14, 3, 9);
    let params = VgaeParams::init(3, 5, 3, set.names(), &mut SeedTree::new(8).stream("p", 0)).unwrap();
    let ex = vec![
        Example { u: 0, v: 6, negs: vec![8, 9, 13] },
        Example { u: 3, v: 9, negs: vec![6, 6, 12] },
        Example { u: 1, v: 3, negs: vec![5, 2, 0] },
        Example { u: 5, v: 12, negs: vec![7, 11, 10] },
    ];
    let kl = 1.0;
    let analytic = batch_gradient(&set, &x, &params, &ex, &eps, kl).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus.data[i] += h;
        let mut minus = params.clone();
        minus.data[i] -= h;
        let num = (objective(&set, &x, &plus, &ex, &eps, kl).unwrap() - objective(&set, &x, &minus, &ex, &eps, kl).unwrap()) / (2.0 * h);
        let scale = num.abs().max(analytic[i].abs()).max(1e-3);
        worst = worst.max((num - analytic[i]).abs() / scale);
    }
    let secs = t.elapsed().as_secs_f64();
    (worst <= 1e-4 && secs < 60.0, format!("{} parameters, max relative error {worst:.2e}, {secs:.2}s", params.len()))
}

fn c5() -> (bool, String) {
    let (eps, delta) = (0.5, 1e-5);
    let sigma = gaussian_sigma(eps, delta, 1.0).unwrap();
    let mech = move |x: &f64, rng: &mut rand_chacha::ChaCha20Rng| {
        let z: f64 = StandardNormal.sample(rng);
        x + sigma * z
    };
    let config = AuditConfig { samples: 1_000_000, epsilon: eps, ..AuditConfig::default() };
    let r = empirical_privacy_audit(mech, &0.0, &1.0, &config, 5).unwrap();
    let bound = delta + 3.0 * r.standard_error;
    (r.exceedance <= bound, format!("exceedance {:.3e} <= {bound:.3e} (sigma {sigma:.3})", r.exceedance))
}

fn c6() -> (bool, String) {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset();
    cfg.privacy.enabled = false;
    cfg.seed = 0;
    cfg.out = Some(dir.path().to_path_buf());
    let (_, outcome) = run_pipeline(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let ok = outcome.val_auc >= 0.85 && cfg.vgae.epochs <= 100 && secs < 300.0;
    (ok, format!("validation AUC {:.4} in {} epochs, {secs:.1}s", outcome.val_auc, cfg.vgae.epochs))
}

fn c7(records: &[MetricsRecord], secs: f64) -> (bool, String) {
    let pts = curve(records, "val_auc");
    let means: Vec<f64> = pts.iter().map(|p| p.mean).collect();
    let ok = pts.iter().all(|p| p.n >= 5) && means.windows(2).all(|w| w[1] >= w[0] - 0.02) && secs < 1800.0;
    let shape = pts
        .iter()
        .map(|p| format!("{}:{:.3}±{:.3}", p.epsilon, p.mean, p.std))
        .collect::<Vec<_>>()
        .join(" ");
    (ok, format!("mean val AUC {shape} (n = {}), {secs:.0}s", pts.first().map_or(0, |p| p.n)))
}

fn attack_rates(records: &[MetricsRecord], eps: f64) -> Vec<(u64, f64)> {
    records
        .iter()
        .filter(|r| r.privacy.epsilon == eps && r.status == RunStatus::Ok)
        .filter_map(|r| Some((r.seed, r.metric("attack_rate")?)))
        .collect()
}

fn c9(records: &[MetricsRecord]) -> (bool, String) {
    // One-sided 95% critical values of Student's t for 9..=19 degrees of freedom.
    const T95: [f64; 11] = [1.833, 1.812, 1.796, 1.782, 1.771, 1.761, 1.753, 1.746, 1.740, 1.734, 1.729];
    let clean = attack_rates(records, f64::INFINITY);
    let mut ok = true;
    let mut parts = Vec::new();
    for eps in [0.1, 0.01] {
        let private = attack_rates(records, eps);
        let diffs: Vec<f64> = clean
            .iter()
            .filter_map(|(s, c)| private.iter().find(|(t, _)| t == s).map(|(_, p)| c - p))
            .collect();
        let n = diffs.len();
        if !(10..=20).contains(&n) {
            ok = false;
            parts.push(format!("eps {eps}: {n} pairs"));
            continue;
        }
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let t = if sd > 0.0 { mean / (sd / (n as f64).sqrt()) } else if mean > 0.0 { f64::INFINITY } else { 0.0 };
        let mp = private.iter().map(|p| p.1).sum::<f64>() / private.len() as f64;
        ok &= mean > 0.0 && t > T95[n - 10];
        parts.push(format!("eps {eps}: rate {mp:.3}, paired t {t:.1} over {n} seeds"));
    }
    let mc = clean.iter().map(|p| p.1).sum::<f64>() / clean.len().max(1) as f64;
    (ok, format!("no-noise rate {mc:.3}; {}", parts.join("; ")))
}

fn c8(cfg: &RunConfig, graph: &HeteroGraph) -> (bool, String, Vec<MetricsRecord>) {
    let res = run_ablation(graph, cfg, 0.01, &[0, 1, 2, 3, 4], &AblationArm::ALL).unwrap();
    let m = |arm| res.mean(arm, "val_auc").unwrap_or(f64::NAN);
    let (none, feat, topo, both) = (m(AblationArm::NoNoise), m(AblationArm::FeatureOnly), m(AblationArm::TopologyOnly), m(AblationArm::Both));
    let ok = topo <= feat && both <= feat + 0.02 && both <= topo + 0.02;
    let recs = res.arms.into_values().flatten().collect();
    (ok, format!("no noise {none:.3}, feature-only {feat:.3}, topology-only {topo:.3}, both {both:.3}"), recs)
}

fn c10(records: &[MetricsRecord], cfg: &RunConfig, graph: &HeteroGraph) -> (bool, String) {
    let conserved = records.iter().filter(|r| r.budget_conserved()).count();
    let mut small = cfg.clone();
    small.privacy.epsilon = 0.1;
    small.allocator_grid = vec![0.3, 0.7];
    small.allocator_seeds = vec![0];
    small.allocator_refine = 0;
    let plan = allocate_with_pipeline(graph, &small).unwrap();
    let rows_ok = plan.table.iter().all(|r| r.epsilon_f + r.epsilon_s == plan.epsilon) && plan.table.iter().all(|r| r.status != RowStatus::Failed);

    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hetero-dp"))
        .arg("train")
        .arg("--config")
        .arg(manifest().join("tests/fixtures/infeasible.cfg"))
        .arg("--out")
        .arg(dir.path())
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    let code = out.status.code();
    let ok = conserved == records.len() && rows_ok && code == Some(4);
    (
        ok,
        format!(
            "{conserved}/{} records conserve the budget, {} allocation rows exact, infeasible fixture exit {code:?}",
            records.len(),
            plan.table.len()
        ),
    )
}

fn random_adjacency(n: usize, p: f64, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = SeedTree::new(seed).stream("acceptance.graph", 0);
    let mut adj = vec![Vec::new(); n];
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
    }
    adj
}

fn brute_quads(adj: &[Vec<usize>]) -> Vec<u64> {
    let n = adj.len();
    let has = |a: usize, b: usize| adj[a].contains(&b);
    let mut c = vec![0u64; n];
    for a in 0..n {
        for b in a + 1..n {
            for x in b + 1..n {
                for y in x + 1..n {
                    for [p0, p1, p2, p3] in [[a, b, x, y], [a, b, y, x], [a, x, b, y]] {
                        if has(p0, p1) && has(p1, p2) && has(p2, p3) && has(p3, p0) {
                            for v in [a, b, x, y] {
                                c[v] += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    c
}

fn c11() -> (bool, String) {
    let mut rng = SeedTree::new(11).stream("acceptance", 11);
    let mut auc_ok = true;
    for _ in 0..20 {
        let np = rng.random_range(1..500);
        let nn = rng.random_range(1..500);
        // Coarse scores so ties occur.
        let pos: Vec<f64> = (0..np).map(|_| (rng.random_range(0.0..1.0f64) * 20.0).round() / 20.0).collect();
        let neg: Vec<f64> = (0..nn).map(|_| (rng.random_range(0.0..1.0f64) * 20.0).round() / 20.0 - 0.1).collect();
        let mut wins = 0.0;
        for p in &pos {
            for q in &neg {
                wins += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
            }
        }
        let brute = wins / (np * nn) as f64;
        auc_ok &= (link_prediction_auc(&pos, &neg).unwrap() - brute).abs() <= 1e-12;
    }

    let mut quads_ok = true;
    for seed in 0..10 {
        let n = 20 + 3 * seed as usize;
        let adj = random_adjacency(n, 0.15, seed);
        quads_ok &= quadrilateral_counts(&adj) == brute_quads(&adj);
    }

    let small = synthetic::SyntheticConfig { papers: 24, authors: 18, fields: 4, communities: 3, ..Default::default() };
    let mut walks_ok = true;
    let mut paths = 0;
    for seed in 0..5 {
        let (g, _) = synthetic::generate(&small, seed).unwrap();
        for m in &g.schema().metapaths {
            if m.start_type() != m.end_type() {
                continue;
            }
            let sg = extract_semantic_subgraph(&g, m).unwrap();
            let edges: BTreeSet<(usize, usize)> = sg.edges().into_iter().collect();
            walks_ok &= edges == enumerate_walk_pairs(&g, m).unwrap();
            paths += 1;
        }
    }
    (
        auc_ok && quads_ok && walks_ok,
        format!("AUC vs brute force {auc_ok}, 4-cycles vs subsets {quads_ok}, semantic subgraphs vs walks {walks_ok} ({paths} meta-paths)"),
    )
}

fn acm_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("HETERO_DP_ACM_DIR").map(PathBuf::from).unwrap_or_else(|| manifest().join("data/acm"));
    dir.join("schema.cfg").exists().then_some(dir)
}

fn c12(dir: &Path) -> (bool, String) {
    let g = load_dataset(dir).unwrap();
    let s = g.schema();
    let nodes = |name: &str| s.node_type(name).map(|t| g.num_nodes(t));
    let edges = |names: &[&str]| names.iter().find_map(|n| s.relation(n)).map(|r| g.num_edges(r));
    let got = [
        nodes("author"),
        nodes("paper"),
        nodes("field"),
        edges(&["paper-author", "paper_author", "pa"]),
        edges(&["paper-field", "paper_field", "pf"]),
    ];
    let want = [17_351, 4_025, 72, 13_407, 4_025];
    let ok = got.iter().zip(want).all(|(g, w)| *g == Some(w));
    (ok, format!("counts {got:?}, expected {want:?}"))
}

#[test]
fn acceptance() {
    let mut out = Vec::new();
    for (id, f) in [(1, c1 as fn() -> (bool, String)), (2, c2), (3, c3), (4, c4), (5, c5), (6, c6)] {
        let (ok, detail) = f();
        report(&mut out, id, Some(ok), detail);
    }

    let cfg = preset();
    let graph = load_graph(&cfg).unwrap();
    let t = Instant::now();
    let seeds: Vec<u64> = (0..10).collect();
    let sweep = run_epsilon_sweep(&graph, &cfg, &[0.01, 0.1, 1.0, f64::INFINITY], &seeds, &SweepOptions::from_config(&cfg)).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (ok, detail) = c7(&sweep, secs);
    report(&mut out, 7, Some(ok), detail);

    let (ok, detail, ablation) = c8(&cfg, &graph);
    report(&mut out, 8, Some(ok), detail);

    let (ok, detail) = c9(&sweep);
    report(&mut out, 9, Some(ok), detail);

    let all: Vec<MetricsRecord> = sweep.into_iter().chain(ablation).collect();
    let (ok, detail) = c10(&all, &cfg, &graph);
    report(&mut out, 10, Some(ok), detail);

    let (ok, detail) = c11();
    report(&mut out, 11, Some(ok), detail);

    match acm_dir() {
        Some(dir) => {
            let (ok, detail) = c12(&dir);
            report(&mut out, 12, Some(ok), detail);
        }
        None => report(&mut out, 12, None, "ACM corpus not found (set HETERO_DP_ACM_DIR); skipped".into()),
    }

    let failed: Vec<String> = out.iter().filter(|o| o.pass == Some(false)).map(|o| format!("{}: {}", o.id, o.detail)).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
