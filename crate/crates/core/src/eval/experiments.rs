//! Budget sweeps and mechanism ablations. Every budget value and arm of one
//! seed reuses the same split, encoder and random streams.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{reconstruct_graph, topology_attack, MetricsRecord, RunStatus};
use crate::config::{AttackMode, Reconstruction, RunConfig};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::pipeline::{dataset_name, metrics_record, prepare, run_prepared, Prepared};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    /// Also run the signature attack against the graph rebuilt from each model.
    pub attack: Option<(AttackMode, Reconstruction)>,
}

impl SweepOptions {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            attack: Some((config.attack_mode, config.reconstruction)),
        }
    }
}

fn with_budget(config: &RunConfig, epsilon: f64) -> RunConfig {
    let mut c = config.clone();
    c.privacy.epsilon_f = None;
    c.privacy.epsilon_s = None;
    if epsilon.is_infinite() {
        c.privacy.enabled = false;
        c.privacy.epsilon = f64::INFINITY;
    } else {
        c.privacy.enabled = true;
        c.privacy.epsilon = epsilon;
    }
    c
}

fn infeasible(err: &Error) -> bool {
    matches!(err.exit_code(), 4) || matches!(err, Error::Privacy(_)) || matches!(err, Error::Stage { source, .. } if infeasible(source))
}

fn evaluate(prep: &Prepared, config: &RunConfig, options: &SweepOptions) -> Result<MetricsRecord> {
    match run_prepared(prep, config) {
        Ok(outcome) => {
            let mut rec = metrics_record(config, &outcome);
            if let Some((mode, rule)) = options.attack {
                let target = reconstruct_graph(&prep.train_graph, &outcome.mu, rule)?;
                let res = topology_attack(&prep.train_graph, &target, mode)?;
                rec.metrics.insert("attack_unique".into(), res.unique_in_auxiliary as f64);
                if let Some(r) = res.rate {
                    rec.metrics.insert("attack_rate".into(), r);
                }
            }
            Ok(rec)
        }
        Err(e) if infeasible(&e) => {
            let mut rec = MetricsRecord::new(config, &dataset_name(config));
            rec.status = RunStatus::Infeasible;
            rec.message = Some(e.to_string());
            Ok(rec)
        }
        Err(e) => Err(e),
    }
}

/// One record per `(epsilon, seed)`, sorted by epsilon then seed. An
/// infinite epsilon runs without either mechanism.
pub fn run_epsilon_sweep(graph: &HeteroGraph, config: &RunConfig, epsilons: &[f64], seeds: &[u64], options: &SweepOptions) -> Result<Vec<MetricsRecord>> {
    if epsilons.is_empty() || seeds.is_empty() {
        return Err(Error::Argument("sweep needs at least one epsilon and one seed".into()));
    }
    let mut records = Vec::new();
    for &seed in seeds {
        let mut base = config.clone();
        base.seed = seed;
        let prep = prepare(graph.clone(), &base)?;
        for &eps in epsilons {
            let rec = evaluate(&prep, &with_budget(&base, eps), options)?;
            log::info!("seed {seed} eps {eps}: {:?} {:?}", rec.status, rec.metrics);
            records.push((eps, rec));
        }
    }
    records.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.seed.cmp(&b.1.seed)));
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationArm {
    NoNoise,
    FeatureOnly,
    TopologyOnly,
    Both,
}

impl AblationArm {
    pub const ALL: [AblationArm; 4] = [AblationArm::NoNoise, AblationArm::FeatureOnly, AblationArm::TopologyOnly, AblationArm::Both];

    fn apply(self, config: &RunConfig, epsilon: f64) -> RunConfig {
        let mut c = with_budget(config, epsilon);
        let (f, t) = match self {
            AblationArm::NoNoise => (false, false),
            AblationArm::FeatureOnly => (true, false),
            AblationArm::TopologyOnly => (false, true),
            AblationArm::Both => (true, true),
        };
        c.privacy.feature_noise = f;
        c.privacy.topology_noise = t;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub epsilon: f64,
    pub arms: BTreeMap<AblationArm, Vec<MetricsRecord>>,
}

impl AblationResult {
    pub fn mean(&self, arm: AblationArm, metric: &str) -> Option<f64> {
        let xs: Vec<f64> = self.arms.get(&arm)?.iter().filter_map(|r| r.metric(metric)).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Feature-only, topology-only and both-mechanism runs at one budget, plus
/// the no-noise reference, all sharing seeds and non-privacy settings.
pub fn run_ablation(graph: &HeteroGraph, config: &RunConfig, epsilon: f64, seeds: &[u64], arms: &[AblationArm]) -> Result<AblationResult> {
    if !(epsilon > 0.0) {
        return Err(Error::Argument(format!("ablation budget must be positive, got {epsilon}")));
    }
    let options = SweepOptions { attack: None };
    let mut out: BTreeMap<AblationArm, Vec<MetricsRecord>> = BTreeMap::new();
    for &seed in seeds {
        let mut base = config.clone();
        base.seed = seed;
        let prep = prepare(graph.clone(), &base)?;
        for &arm in arms {
            let rec = evaluate(&prep, &arm.apply(&base, epsilon), &options)?;
            log::info!("seed {seed} {arm:?}: {:?}", rec.metrics);
            out.entry(arm).or_default().push(rec);
        }
    }
    Ok(AblationResult { epsilon, arms: out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub infeasible: usize,
}

/// Mean and sample standard deviation of `metric` per epsilon, sorted by epsilon.
pub fn curve(records: &[MetricsRecord], metric: &str) -> Vec<CurvePoint> {
    let mut groups: Vec<(f64, Vec<f64>, usize)> = Vec::new();
    for r in records {
        let eps = r.privacy.epsilon;
        let idx = match groups.iter().position(|g| g.0 == eps) {
            Some(i) => i,
            None => {
                groups.push((eps, Vec::new(), 0));
                groups.len() - 1
            }
        };
        match (r.status, r.metric(metric)) {
            (RunStatus::Ok, Some(v)) => groups[idx].1.push(v),
            (RunStatus::Infeasible, _) => groups[idx].2 += 1,
            _ => {}
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    groups
        .into_iter()
        .map(|(epsilon, xs, infeasible)| {
            let n = xs.len();
            let mean = if n == 0 { f64::NAN } else { xs.iter().sum::<f64>() / n as f64 };
            let std = if n < 2 {
                0.0
            } else {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            CurvePoint { epsilon, mean, std, n, infeasible }
        })
        .collect()
}

/// Tab-separated `epsilon mean std n infeasible`, one row per point.
pub fn write_curve_tsv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut text = String::from("epsilon\tmean\tstd\tn\tinfeasible\n");
    for p in points {
        let eps = if p.epsilon.is_infinite() { "inf".to_string() } else { p.epsilon.to_string() };
        text.push_str(&format!("{eps}\t{:.6}\t{:.6}\t{}\t{}\n", p.mean, p.std, p.n, p.infeasible));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
