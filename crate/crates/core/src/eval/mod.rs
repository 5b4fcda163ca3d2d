//! Evaluation: ranking metrics, node-classification probe, structural
//! re-identification attack, and experiment drivers.

mod attack;
mod experiments;
mod probe;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Task};
use crate::error::{Error, Result};

pub use attack::{
    build_signature_table, quadrilateral_counts, reconstruct_graph, rewire, signature_summary, topology_attack, AttackResult, Signature,
    SignatureTable,
};
pub use experiments::{
    curve, run_ablation, run_epsilon_sweep, write_curve_tsv, AblationArm, AblationResult, CurvePoint, SweepOptions,
};
pub use probe::{node_classification_f1, stratified_split, ProbeConfig};

/// Budget values serialize as numbers, with infinity as the string `"inf"`.
mod budget_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*x)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(x),
            Raw::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad budget `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyRecord {
    pub enabled: bool,
    #[serde(with = "budget_serde")]
    pub epsilon: f64,
    #[serde(with = "budget_serde")]
    pub epsilon_f: f64,
    #[serde(with = "budget_serde")]
    pub epsilon_s: f64,
    pub delta: f64,
    pub lambda: f64,
    pub noise_multiplier: Option<f64>,
    pub feature_noise: bool,
    pub topology_noise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// The accountant or the budget split rejected the configuration.
    Infeasible,
    Failed,
}

/// One evaluated configuration. `config` is the full echo, so the record
/// can be replayed on the same dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub task: Task,
    pub dataset: String,
    pub privacy: PrivacyRecord,
    pub metrics: BTreeMap<String, f64>,
    pub seed: u64,
    pub runtime_s: f64,
    pub status: RunStatus,
    pub message: Option<String>,
    pub config: String,
}

impl MetricsRecord {
    pub fn new(config: &RunConfig, dataset: &str) -> Self {
        let p = &config.privacy;
        let active = p.active();
        let (epsilon_f, epsilon_s) = match p.spec() {
            Ok(Some(s)) => (s.epsilon_f, s.epsilon_s),
            _ if !active => (f64::INFINITY, f64::INFINITY),
            _ => (f64::NAN, f64::NAN),
        };
        Self {
            task: config.task,
            dataset: dataset.to_string(),
            privacy: PrivacyRecord {
                enabled: active,
                epsilon: if active { p.epsilon } else { f64::INFINITY },
                epsilon_f,
                epsilon_s,
                delta: p.delta,
                lambda: p.lambda,
                noise_multiplier: None,
                feature_noise: active && p.feature_noise,
                topology_noise: active && p.topology_noise,
            },
            metrics: BTreeMap::new(),
            seed: config.seed,
            runtime_s: 0.0,
            status: RunStatus::Ok,
            message: None,
            config: config.echo(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// Whether the recorded feature and topology budgets add up to the total exactly.
    pub fn budget_conserved(&self) -> bool {
        let p = &self.privacy;
        if !p.enabled {
            return p.epsilon.is_infinite();
        }
        p.epsilon_f + p.epsilon_s == p.epsilon
    }

    pub fn append_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        writeln!(f, "{}", serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }
}

pub fn write_metrics_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Ingest {
                file: path.display().to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// ROC-AUC as the Mann-Whitney rank statistic, ties counted one half.
pub fn link_prediction_auc(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(Error::DegenerateTask(format!(
            "AUC needs both classes ({} positive, {} negative scores)",
            pos_scores.len(),
            neg_scores.len()
        )));
    }
    if pos_scores.iter().chain(neg_scores).any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    let mut all: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg_rank * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (np, nn) = (pos_scores.len() as f64, neg_scores.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(p: &[f64], n: &[f64]) -> f64 {
        let mut acc = 0.0;
        for a in p {
            for b in n {
                acc += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        acc / (p.len() * n.len()) as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(link_prediction_auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(link_prediction_auc(&[0.1], &[0.9]).unwrap(), 0.0);
        assert_eq!(link_prediction_auc(&[0.5, 0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(link_prediction_auc(&[0.9, 0.4], &[0.6, 0.1]).unwrap(), 0.75);
        assert!(matches!(link_prediction_auc(&[], &[0.1]), Err(Error::DegenerateTask(_))));
    }

    proptest! {
        #[test]
        fn auc_equals_pairwise_count(p in proptest::collection::vec(-3i32..3, 1..40), n in proptest::collection::vec(-3i32..3, 1..40)) {
            let p: Vec<f64> = p.into_iter().map(f64::from).collect();
            let n: Vec<f64> = n.into_iter().map(f64::from).collect();
            prop_assert_eq!(link_prediction_auc(&p, &n).unwrap(), brute_auc(&p, &n));
        }
    }
}
