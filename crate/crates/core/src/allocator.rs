//! Splitting a global budget between feature noise and topology noise by a
//! coordinate grid search over a measured objective.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dp::split_budget;
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::pipeline::{prepare, run_prepared, Prepared};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Scored,
    Infeasible,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRow {
    /// 1 for the coarse grid, 2 for the refinement around its best point.
    pub phase: u8,
    /// Share of the budget given to the features.
    pub fraction: f64,
    pub epsilon_f: f64,
    pub epsilon_s: f64,
    pub scores: Vec<(u64, f64)>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub status: RowStatus,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub epsilon: f64,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub objective: String,
    /// `(epsilon_f, epsilon_s)` of the best scored row.
    pub chosen: Option<(f64, f64)>,
    pub table: Vec<AllocationRow>,
    /// Set when an evaluation failed and the search stopped early.
    pub aborted: Option<String>,
}

/// How an evaluation ended, as seen by the search.
#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    Score(f64),
    /// The accountant or the budget split rejected the point.
    Infeasible(String),
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() < 2 { 0.0 } else { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) };
    (mean, var.sqrt())
}

/// Points strictly between the neighbors of `best` in the sorted `visited` fractions.
fn refinement(visited: &[f64], best: f64, count: usize) -> Vec<f64> {
    if count == 0 {
        return Vec::new();
    }
    let lo = visited.iter().copied().filter(|&f| f < best).fold(0.0, f64::max);
    let hi = visited.iter().copied().filter(|&f| f > best).fold(1.0, f64::min);
    let mut out = Vec::new();
    for (a, b) in [(lo, best), (best, hi)] {
        for i in 1..=count / 2 + count % 2 {
            let f = a + (b - a) * i as f64 / (count / 2 + count % 2 + 1) as f64;
            if f > 0.0 && f < 1.0 && !visited.contains(&f) {
                out.push(f);
            }
        }
    }
    out
}

impl AllocationPlan {
    /// Best scored row; ties go to the larger topology share.
    fn best(&self) -> Option<&AllocationRow> {
        self.table
            .iter()
            .filter(|r| r.status == RowStatus::Scored)
            .max_by(|a, b| {
                a.mean
                    .unwrap()
                    .total_cmp(&b.mean.unwrap())
                    .then(a.epsilon_s.total_cmp(&b.epsilon_s))
            })
    }

    pub fn row_at(&self, fraction: f64) -> Option<&AllocationRow> {
        self.table.iter().find(|r| r.fraction == fraction)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Phase 1 scores every grid fraction of `epsilon`; phase 2 scores `refine`
/// fractions between the best grid point and its neighbors. Every row
/// satisfies `epsilon_f + epsilon_s == epsilon` exactly. Infeasible points
/// are recorded and skipped; any other evaluator error stops the search and
/// leaves a partial table.
pub fn allocate<F>(epsilon: f64, grid: &[f64], seeds: &[u64], refine: usize, mut evaluator: F) -> Result<AllocationPlan>
where
    F: FnMut(f64, f64, u64) -> Result<Evaluation>,
{
    if grid.is_empty() {
        return Err(Error::Argument("allocation grid is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Argument("allocation needs at least one seed".into()));
    }
    if let Some(f) = grid.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(Error::Argument(format!("grid fraction {f} is outside (0,1)")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Argument(format!("total budget must be positive and finite, got {epsilon}")));
    }
    let mut plan = AllocationPlan {
        epsilon,
        grid: grid.to_vec(),
        seeds: seeds.to_vec(),
        objective: "val_auc".into(),
        chosen: None,
        table: Vec::new(),
        aborted: None,
    };
    let mut run_phase = |plan: &mut AllocationPlan, phase: u8, fractions: &[f64]| -> Result<bool> {
        for &fraction in fractions {
            let (epsilon_f, epsilon_s) = split_budget(epsilon, fraction)?;
            let mut row = AllocationRow {
                phase,
                fraction,
                epsilon_f,
                epsilon_s,
                scores: Vec::new(),
                mean: None,
                std: None,
                status: RowStatus::Scored,
                message: None,
            };
            for &seed in seeds {
                match evaluator(epsilon_f, epsilon_s, seed) {
                    Ok(Evaluation::Score(s)) => row.scores.push((seed, s)),
                    Ok(Evaluation::Infeasible(msg)) => {
                        row.status = RowStatus::Infeasible;
                        row.message = Some(msg);
                        break;
                    }
                    Err(e) => {
                        row.status = RowStatus::Failed;
                        row.message = Some(e.to_string());
                        plan.aborted = Some(format!("evaluation at fraction {fraction}, seed {seed} failed: {e}"));
                        plan.table.push(row);
                        return Ok(false);
                    }
                }
            }
            if row.status == RowStatus::Scored {
                let xs: Vec<f64> = row.scores.iter().map(|s| s.1).collect();
                let (m, s) = mean_std(&xs);
                row.mean = Some(m);
                row.std = Some(s);
            }
            plan.table.push(row);
        }
        Ok(true)
    };
    if !run_phase(&mut plan, 1, grid)? {
        return Ok(plan);
    }
    if let Some(best) = plan.best().map(|r| r.fraction) {
        let visited: Vec<f64> = plan.table.iter().map(|r| r.fraction).collect();
        let extra = refinement(&visited, best, refine);
        if !run_phase(&mut plan, 2, &extra)? {
            return Ok(plan);
        }
    }
    plan.chosen = plan.best().map(|r| (r.epsilon_f, r.epsilon_s));
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationComparison {
    pub epsilon: f64,
    pub equal_split: Option<f64>,
    pub optimized: Option<f64>,
    pub chosen: Option<(f64, f64)>,
    /// `(fraction, mean, std)` of every scored row, sorted by fraction.
    pub series: Vec<(f64, f64, f64)>,
}

/// Equal split against the chosen split, plus the objective along the grid.
pub fn report_allocation(plan: &AllocationPlan) -> AllocationComparison {
    let mut series: Vec<(f64, f64, f64)> = plan
        .table
        .iter()
        .filter(|r| r.status == RowStatus::Scored)
        .map(|r| (r.fraction, r.mean.unwrap(), r.std.unwrap()))
        .collect();
    series.sort_by(|a, b| a.0.total_cmp(&b.0));
    AllocationComparison {
        epsilon: plan.epsilon,
        equal_split: plan.row_at(0.5).and_then(|r| r.mean),
        optimized: plan.best().and_then(|r| r.mean),
        chosen: plan.chosen,
        series,
    }
}

impl AllocationComparison {
    /// Tab-separated `fraction mean std` rows.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("fraction\tmean\tstd\n");
        for (f, m, s) in &self.series {
            text.push_str(&format!("{f}\t{m:.6}\t{s:.6}\n"));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// [`allocate`] with validation AUC of the full pipeline as the objective.
/// Splits and encoders are prepared once per seed.
pub fn allocate_with_pipeline(graph: &HeteroGraph, config: &RunConfig) -> Result<AllocationPlan> {
    let mut cache: HashMap<u64, Prepared> = HashMap::new();
    let epsilon = config.privacy.epsilon;
    allocate(epsilon, &config.allocator_grid, &config.allocator_seeds, config.allocator_refine, |ef, es, seed| {
        let mut c = config.clone();
        c.seed = seed;
        c.privacy.enabled = true;
        c.privacy.epsilon_f = Some(ef);
        c.privacy.epsilon_s = Some(es);
        if let Entry::Vacant(e) = cache.entry(seed) {
            e.insert(prepare(graph.clone(), &c)?);
        }
        match run_prepared(&cache[&seed], &c) {
            Ok(o) => Ok(Evaluation::Score(o.val_auc)),
            Err(e) if e.exit_code() == 4 || matches!(source_of(&e), Error::Privacy(_)) => Ok(Evaluation::Infeasible(e.to_string())),
            Err(e) => Err(e),
        }
    })
}

fn source_of(e: &Error) -> &Error {
    match e {
        Error::Stage { source, .. } => source_of(source),
        other => other,
    }
}
