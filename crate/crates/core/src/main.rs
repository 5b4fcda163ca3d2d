use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hetero_dp::allocator::{allocate_with_pipeline, report_allocation};
use hetero_dp::config::{parse_f64, RunConfig, Task};
use hetero_dp::eval::{
    build_signature_table, curve, reconstruct_graph, run_epsilon_sweep, signature_summary, topology_attack, write_curve_tsv, write_metrics_jsonl,
    SweepOptions,
};
use hetero_dp::graph::{split_edges, validate, write_split};
use hetero_dp::pipeline::{create_dir, evaluate_checkpoint, load_graph, output_dir, run_pipeline, target_relation};
use hetero_dp::vgae::read_checkpoint;
use hetero_dp::{Error, Result};

#[derive(Parser)]
#[command(name = "hetero-dp", version, about = "Private heterogeneous graph embedding and link prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a dataset, then write its edge split.
    Prepare,
    /// Train one model end to end and write its artifacts.
    Train,
    /// Score a saved checkpoint.
    Evaluate,
    /// Utility over a list of budgets and seeds.
    Sweep,
    /// Search the feature/topology budget split.
    Allocate,
    /// Re-identification attack against the graph rebuilt from a model.
    Attack,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Lp,
    Nc,
}

#[derive(Args)]
struct Common {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "X")]
    epsilon: Option<String>,
    #[arg(long = "epsilon-f", global = true, value_name = "X")]
    epsilon_f: Option<String>,
    #[arg(long = "epsilon-s", global = true, value_name = "X")]
    epsilon_s: Option<String>,
    #[arg(long, global = true)]
    privacy: Option<OnOff>,
    #[arg(long, global = true)]
    task: Option<TaskArg>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dataset directory; overrides data.path.
    #[arg(long, global = true, value_name = "DIR")]
    dataset: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Comma-separated budgets for `sweep`, `inf` for no privacy.
    #[arg(long, global = true, value_name = "LIST")]
    epsilons: Option<String>,
    /// Seed count N (seeds 0..N) or a comma-separated list.
    #[arg(long, global = true, value_name = "N|LIST")]
    seeds: Option<String>,
    /// Any `section.key=value` setting; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v, None)?;
        }
        if let Some(d) = &self.dataset {
            cfg.data_path = Some(d.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.task {
            cfg.task = match t {
                TaskArg::Lp => Task::Lp,
                TaskArg::Nc => Task::Nc,
            };
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(e) = &self.epsilon {
            cfg.privacy.epsilon = parse_f64("--epsilon", e)?;
            cfg.privacy.enabled = true;
        }
        if let Some(e) = &self.epsilon_f {
            cfg.privacy.epsilon_f = Some(parse_f64("--epsilon-f", e)?);
            cfg.privacy.enabled = true;
        }
        if let Some(e) = &self.epsilon_s {
            cfg.privacy.epsilon_s = Some(parse_f64("--epsilon-s", e)?);
            cfg.privacy.enabled = true;
        }
        if let (Some(f), Some(s), None) = (cfg.privacy.epsilon_f, cfg.privacy.epsilon_s, &self.epsilon) {
            cfg.privacy.epsilon = f + s;
        }
        if let Some(p) = self.privacy {
            cfg.privacy.enabled = matches!(p, OnOff::On);
        }
        if let Some(e) = &self.epsilons {
            cfg.set("sweep.epsilons", e, None)?;
        }
        if let Some(s) = &self.seeds {
            cfg.set("sweep.seeds", s, None)?;
            cfg.set("allocator.seeds", s, None)?;
        }
        Ok(cfg)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn prepare(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let graph = load_graph(cfg).map_err(|e| e.in_stage("load"))?;
    let report = validate(&graph);
    write(&dir.join("validation.json"), &serde_json::to_string_pretty(&report)?)?;
    let schema = graph.schema();
    for (t, name) in schema.node_types.iter().enumerate() {
        println!("node type {name}: {}", graph.num_nodes(t));
    }
    for (r, rel) in schema.relations.iter().enumerate() {
        println!("relation {}: {}", rel.name, graph.num_edges(r));
    }
    println!("{} violation(s)", report.violations.len());
    for v in &report.violations {
        println!("  {v}");
    }
    if !report.is_valid() {
        return Err(Error::Validation(format!("{} violation(s)", report.violations.len())));
    }
    let rel = target_relation(&graph, cfg)?;
    let split = split_edges(&graph, rel, cfg.split, cfg.seed).map_err(|e| e.in_stage("split"))?;
    let path = write_split(&graph, &split, dir)?;
    println!("split written to {}", path.display());
    Ok(())
}

fn train(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let (_, outcome) = run_pipeline(cfg)?;
    println!("val_auc\t{:.4}\ntest_auc\t{:.4}", outcome.val_auc, outcome.test_auc);
    if let Some(f) = outcome.f1 {
        println!("micro_f1\t{f:.4}");
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn checkpoint_path(common: &Common, dir: &Path) -> PathBuf {
    common.checkpoint.clone().unwrap_or_else(|| dir.join("checkpoint.json"))
}

fn evaluate(common: &Common, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ckpt = read_checkpoint(&checkpoint_path(common, dir))?;
    let graph = load_graph(cfg).map_err(|e| e.in_stage("load"))?;
    let eval = evaluate_checkpoint(&graph, cfg, &ckpt)?;
    write_metrics_jsonl(&dir.join("eval_metrics.jsonl"), std::slice::from_ref(&eval.record))?;
    for (k, v) in &eval.record.metrics {
        println!("{k}\t{v:.4}");
    }
    Ok(())
}

fn sweep(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let graph = load_graph(cfg).map_err(|e| e.in_stage("load"))?;
    let records = run_epsilon_sweep(&graph, cfg, &cfg.sweep_epsilons, &cfg.sweep_seeds, &SweepOptions::from_config(cfg))?;
    write_metrics_jsonl(&dir.join("sweep_metrics.jsonl"), &records)?;
    let metric = match cfg.task {
        Task::Lp => "val_auc",
        Task::Nc => "micro_f1",
    };
    let points = curve(&records, metric);
    write_curve_tsv(&dir.join("curve.tsv"), &points)?;
    write_curve_tsv(&dir.join("attack_curve.tsv"), &curve(&records, "attack_rate"))?;
    println!("epsilon\t{metric}\tstd\tn\tinfeasible");
    for p in &points {
        println!("{}\t{:.4}\t{:.4}\t{}\t{}", p.epsilon, p.mean, p.std, p.n, p.infeasible);
    }
    Ok(())
}

fn allocate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let graph = load_graph(cfg).map_err(|e| e.in_stage("load"))?;
    let plan = allocate_with_pipeline(&graph, cfg)?;
    plan.write_json(&dir.join("allocation.json"))?;
    let cmp = report_allocation(&plan);
    cmp.write_tsv(&dir.join("allocation.tsv"))?;
    cmp.write_json(&dir.join("allocation_comparison.json"))?;
    if let Some(msg) = plan.aborted {
        return Err(Error::Numeric(msg).in_stage("allocation"));
    }
    match plan.chosen {
        Some((f, s)) => println!("epsilon_f\t{f}\nepsilon_s\t{s}"),
        None => println!("no feasible split"),
    }
    if let (Some(eq), Some(opt)) = (cmp.equal_split, cmp.optimized) {
        println!("equal split\t{eq:.4}\noptimized\t{opt:.4}");
    }
    Ok(())
}

fn attack(common: &Common, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let (auxiliary, mu) = match &common.checkpoint {
        Some(p) => {
            let ckpt = read_checkpoint(p)?;
            let graph = load_graph(cfg).map_err(|e| e.in_stage("load"))?;
            let eval = evaluate_checkpoint(&graph, cfg, &ckpt)?;
            (eval.train_graph, eval.mu)
        }
        None => {
            let (prep, outcome) = run_pipeline(cfg)?;
            (prep.train_graph, outcome.mu)
        }
    };
    let target = reconstruct_graph(&auxiliary, &mu, cfg.reconstruction).map_err(|e| e.in_stage("attack"))?;
    let result = topology_attack(&auxiliary, &target, cfg.attack_mode).map_err(|e| e.in_stage("attack"))?;
    result.write_json(&dir.join("attack.json"))?;
    let summary = signature_summary(&build_signature_table(&auxiliary));
    write(&dir.join("signatures.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!("unique signatures\t{}\nmatched\t{}\ncorrect\t{}", result.unique_in_auxiliary, result.matched.len(), result.correct);
    match result.rate {
        Some(r) => println!("rate\t{r:.4}"),
        None => println!("rate\tundefined (no unique signatures)"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.common.config()?;
    let dir = output_dir(&cfg);
    create_dir(&dir)?;
    match cli.command {
        Command::Prepare => prepare(&cfg, &dir),
        Command::Train => train(&cfg, &dir),
        Command::Evaluate => evaluate(&cli.common, &cfg, &dir),
        Command::Sweep => sweep(&cfg, &dir),
        Command::Allocate => allocate(&cfg, &dir),
        Command::Attack => attack(&cli.common, &cfg, &dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
