//! End-to-end run: split, attention encoder, feature noise, private VGAE
//! training, evaluation, artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2};

use crate::config::{RunConfig, Task};
use crate::dp::PrivacySpec;
use crate::encoder::{
    encode_with_privacy, normalize_rows, train_encoder, write_attention_report, write_embeddings, AttentionOutput, EncoderParams, EncoderPlan,
    EncoderReport,
};
use crate::error::{Error, Result};
use crate::eval::{node_classification_f1, MetricsRecord, ProbeConfig};
use crate::graph::{load_dataset, split_edges, synthetic, EdgeSplit, HeteroGraph};
use crate::vgae::{encode, train, write_checkpoint, ChannelSet, Checkpoint, TrainReport, VgaeParams, CHECKPOINT_SCHEMA_VERSION};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "HETERO_DP_OUT";

pub fn load_graph(config: &RunConfig) -> Result<HeteroGraph> {
    match &config.data_path {
        Some(p) => load_dataset(p),
        None => Ok(synthetic::generate(&synthetic::SyntheticConfig::default(), config.data_seed)?.0),
    }
}

pub fn dataset_name(config: &RunConfig) -> String {
    match &config.data_path {
        Some(p) => p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()),
        None => format!("synthetic:{}", config.data_seed),
    }
}

pub fn target_relation(graph: &HeteroGraph, config: &RunConfig) -> Result<usize> {
    match &config.target_relation {
        Some(name) => graph
            .schema()
            .relation(name)
            .ok_or_else(|| Error::Config(format!("unknown target relation `{name}`"))),
        None if graph.schema().relations.is_empty() => Err(Error::Config("graph has no relations".into())),
        None => Ok(0),
    }
}

/// Everything that does not depend on the privacy settings: the split and
/// the trained attention encoder. Shared across budget values of one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: HeteroGraph,
    pub split: EdgeSplit,
    pub train_graph: HeteroGraph,
    pub plan: EncoderPlan,
    pub encoder: EncoderParams,
    pub encoder_report: EncoderReport,
    pub seed: u64,
}

pub fn prepare(graph: HeteroGraph, config: &RunConfig) -> Result<Prepared> {
    let rel = target_relation(&graph, config).map_err(|e| e.in_stage("split"))?;
    let split = split_edges(&graph, rel, config.split, config.seed).map_err(|e| e.in_stage("split"))?;
    let train_graph = graph.without_edges(rel, &split.held_out());
    let plan = EncoderPlan::build(&train_graph, &train_graph.schema().metapaths).map_err(|e| e.in_stage("semantic subgraphs"))?;
    let (encoder, encoder_report) =
        train_encoder(&train_graph, &plan, &config.encoder, config.seed).map_err(|e| e.in_stage("encoder training"))?;
    Ok(Prepared {
        graph,
        split,
        train_graph,
        plan,
        encoder,
        encoder_report,
        seed: config.seed,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub privacy: Option<PrivacySpec>,
    /// Noised encoder outputs fed to the VGAE, per node type.
    pub features: Vec<Array2<f64>>,
    pub attention: AttentionOutput,
    pub params: VgaeParams,
    pub report: TrainReport,
    /// Latent means of every node under the retained parameters.
    pub mu: Array2<f64>,
    pub val_auc: f64,
    pub test_auc: f64,
    pub f1: Option<f64>,
    pub runtime_s: f64,
}

impl RunOutcome {
    pub fn per_type_mu(&self, graph: &HeteroGraph) -> Vec<Array2<f64>> {
        let off = graph.type_offsets();
        (0..graph.num_node_types())
            .map(|t| self.mu.slice(s![off[t]..off[t + 1], ..]).to_owned())
            .collect()
    }
}

fn label_type(graph: &HeteroGraph, config: &RunConfig) -> Result<usize> {
    match &config.label_type {
        Some(name) => graph
            .schema()
            .node_type(name)
            .ok_or_else(|| Error::Config(format!("unknown label type `{name}`"))),
        None => (0..graph.num_node_types())
            .find(|&t| !graph.labels(t).is_empty())
            .ok_or_else(|| Error::DegenerateTask("node classification needs labels and the graph has none".into())),
    }
}

/// Feature noise, VGAE training and evaluation on a prepared seed.
pub fn run_prepared(prep: &Prepared, config: &RunConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    if config.seed != prep.seed {
        return Err(Error::Argument(format!("prepared for seed {}, run asks for {}", prep.seed, config.seed)));
    }
    let spec = config.privacy.spec().map_err(|e| e.in_stage("privacy budget"))?;
    let feature_spec = spec.as_ref().filter(|_| config.privacy.feature_noise);
    let topology_spec = spec.as_ref().filter(|_| config.privacy.topology_noise);
    let (mut features, attention) = encode_with_privacy(&prep.train_graph, &prep.plan, &prep.encoder, feature_spec, &config.features, config.seed)
        .map_err(|e| e.in_stage("feature noise"))?;
    if config.features.normalize {
        features.iter_mut().for_each(normalize_rows);
    }
    let (params, report) =
        train(&prep.graph, &prep.split, &features, topology_spec, &config.vgae, config.seed).map_err(|e| e.in_stage("topology training"))?;

    let set = ChannelSet::build(&prep.train_graph, config.vgae.self_loops);
    let x = crate::vgae::stack_features(&features)?;
    let mu = encode(&set, &x, &params)?.mu;
    let split = &prep.split;
    let val_auc = match report.best_val_auc {
        Some(a) => a,
        None => crate::vgae::split_auc(&prep.graph, &mu, split, &split.val, &split.val_neg).map_err(|e| e.in_stage("evaluation"))?,
    };
    let test_auc = crate::vgae::split_auc(&prep.graph, &mu, split, &split.test, &split.test_neg).map_err(|e| e.in_stage("evaluation"))?;
    let f1 = match config.task {
        Task::Lp => None,
        Task::Nc => {
            let t = label_type(&prep.graph, config).map_err(|e| e.in_stage("evaluation"))?;
            let off = prep.graph.type_offsets();
            let rows = mu.slice(s![off[t]..off[t + 1], ..]).to_owned();
            Some(node_classification_f1(&rows, prep.graph.labels(t), &ProbeConfig::default(), config.seed).map_err(|e| e.in_stage("evaluation"))?)
        }
    };
    Ok(RunOutcome {
        privacy: report.privacy.clone().or(spec),
        features,
        attention,
        params,
        report,
        mu,
        val_auc,
        test_auc,
        f1,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

pub fn metrics_record(config: &RunConfig, outcome: &RunOutcome) -> MetricsRecord {
    let mut rec = MetricsRecord::new(config, &dataset_name(config));
    rec.privacy.noise_multiplier = outcome.privacy.as_ref().map(|p| p.noise_multiplier);
    rec.metrics.insert("val_auc".into(), outcome.val_auc);
    rec.metrics.insert("test_auc".into(), outcome.test_auc);
    if let Some(f) = outcome.f1 {
        rec.metrics.insert("micro_f1".into(), f);
    }
    rec.runtime_s = outcome.runtime_s;
    rec
}

/// Output directory: the configured one, else `$HETERO_DP_OUT`, else `runs/`.
pub fn output_dir(config: &RunConfig) -> PathBuf {
    config
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Names of the files [`run_pipeline`] writes into the output directory.
pub const ARTIFACTS: [&str; 6] = ["config.cfg", "checkpoint.json", "embeddings.tsv", "train_report.jsonl", "metrics.jsonl", "attention.json"];

/// Runs one configuration end to end and writes its artifacts.
pub fn run_pipeline(config: &RunConfig) -> Result<(Prepared, RunOutcome)> {
    let dir = output_dir(config);
    create_dir(&dir)?;
    let echo = dir.join(ARTIFACTS[0]);
    std::fs::write(&echo, config.echo()).map_err(|e| Error::io(&echo, e))?;
    let graph = load_graph(config).map_err(|e| e.in_stage("load"))?;
    let prep = prepare(graph, config)?;
    let outcome = run_prepared(&prep, config)?;
    let ckpt = Checkpoint {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        seed: config.seed,
        params: outcome.params.clone(),
        features: outcome.features.clone(),
        privacy: outcome.privacy.clone(),
        ledger: outcome.report.ledger.clone(),
        config: config.vgae.clone(),
    };
    write_checkpoint(&dir.join(ARTIFACTS[1]), &ckpt)?;
    write_embeddings(&dir.join(ARTIFACTS[2]), &prep.graph, &outcome.per_type_mu(&prep.graph))?;
    outcome.report.write_jsonl(&dir.join(ARTIFACTS[3]))?;
    crate::eval::write_metrics_jsonl(&dir.join(ARTIFACTS[4]), &[metrics_record(config, &outcome)])?;
    write_attention_report(&dir.join(ARTIFACTS[5]), &outcome.attention)?;
    log::info!(
        "val auc {:.4}, test auc {:.4}, {} steps, {:.1}s; artifacts in {}",
        outcome.val_auc,
        outcome.test_auc,
        outcome.report.total_steps,
        outcome.runtime_s,
        dir.display()
    );
    Ok((prep, outcome))
}

/// A saved model scored on the split its seed reproduces.
#[derive(Debug, Clone)]
pub struct CheckpointEval {
    pub record: MetricsRecord,
    pub train_graph: HeteroGraph,
    pub mu: Array2<f64>,
}

pub fn evaluate_checkpoint(graph: &HeteroGraph, config: &RunConfig, ckpt: &Checkpoint) -> Result<CheckpointEval> {
    let started = Instant::now();
    let mut config = config.clone();
    config.seed = ckpt.seed;
    let rel = target_relation(graph, &config).map_err(|e| e.in_stage("split"))?;
    let split = split_edges(graph, rel, config.split, ckpt.seed).map_err(|e| e.in_stage("split"))?;
    let train_graph = graph.without_edges(rel, &split.held_out());
    let set = ChannelSet::build(&train_graph, ckpt.config.self_loops);
    let x = crate::vgae::stack_features(&ckpt.features).map_err(|e| e.in_stage("evaluation"))?;
    if x.nrows() != graph.total_nodes() {
        return Err(Error::Shape(format!("checkpoint covers {} nodes, dataset has {}", x.nrows(), graph.total_nodes())).in_stage("evaluation"));
    }
    let mu = encode(&set, &x, &ckpt.params).map_err(|e| e.in_stage("evaluation"))?.mu;
    let auc = |pos, neg| crate::vgae::split_auc(graph, &mu, &split, pos, neg).map_err(|e| e.in_stage("evaluation"));
    let val_auc = auc(&split.val, &split.val_neg)?;
    let test_auc = auc(&split.test, &split.test_neg)?;

    let mut record = MetricsRecord::new(&config, &dataset_name(&config));
    if let Some(p) = &ckpt.privacy {
        record.privacy.enabled = true;
        record.privacy.epsilon = p.epsilon;
        record.privacy.epsilon_f = p.epsilon_f;
        record.privacy.epsilon_s = p.epsilon_s;
        record.privacy.delta = p.delta;
        record.privacy.lambda = p.lambda;
        record.privacy.noise_multiplier = Some(p.noise_multiplier);
    }
    record.metrics.insert("val_auc".into(), val_auc);
    record.metrics.insert("test_auc".into(), test_auc);
    if config.task == Task::Nc {
        let t = label_type(graph, &config).map_err(|e| e.in_stage("evaluation"))?;
        let off = graph.type_offsets();
        let rows = mu.slice(s![off[t]..off[t + 1], ..]).to_owned();
        let f1 = node_classification_f1(&rows, graph.labels(t), &ProbeConfig::default(), ckpt.seed).map_err(|e| e.in_stage("evaluation"))?;
        record.metrics.insert("micro_f1".into(), f1);
    }
    record.runtime_s = started.elapsed().as_secs_f64();
    Ok(CheckpointEval { record, train_graph, mu })
}
