//! Experiment orchestration: dataset resolution, whole-stage runs,
//! end-to-end latency accounting and the profiling advisor.

pub mod advisor;
pub mod cli;
pub mod config;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::metrics::Report;
use crate::optim::{simulate_point, OptimizationPlan, SimSetup, TableWorkload};
use crate::workload::{
    build_mix, table_seed, DatasetKind, DatasetSpec, EmbeddingModelConfig, Hotness, TableMix,
};

pub use advisor::{advise, AdviseContext, AdvisorThresholds, Recommendation, Step, StepId};
pub use config::{ExperimentConfig, ResolvedExperiment};

/// Non-embedding share of one batch (bottom MLP, interaction, top MLP).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndToEndModel {
    pub non_embedding_latency_us: f64,
}

impl EndToEndModel {
    /// Puts the baseline random stage of the default model at about 75% of
    /// the batch latency under the default calibration.
    pub const DEFAULT_NON_EMBEDDING_US: f64 = 18_000.0;
}

impl Default for EndToEndModel {
    fn default() -> Self {
        EndToEndModel {
            non_embedding_latency_us: Self::DEFAULT_NON_EMBEDDING_US,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndToEnd {
    pub embedding_us: f64,
    pub non_embedding_us: f64,
    pub total_us: f64,
    pub embedding_contribution_pct: f64,
}

pub fn end2end(embedding_us: f64, e2e: &EndToEndModel) -> Result<EndToEnd> {
    let ne = e2e.non_embedding_latency_us;
    if !(embedding_us >= 0.0 && ne >= 0.0 && embedding_us.is_finite() && ne.is_finite()) {
        return Err(invalid(format!(
            "latencies must be finite and nonnegative: embedding {embedding_us}, other {ne}"
        )));
    }
    let total = embedding_us + ne;
    if total == 0.0 {
        return Err(invalid(
            "embedding contribution is undefined when both latencies are zero",
        ));
    }
    Ok(EndToEnd {
        embedding_us,
        non_embedding_us: ne,
        total_us: total,
        embedding_contribution_pct: embedding_us / total * 100.0,
    })
}

/// Dataset selector: one preset, a comma list of presets, `all`, or
/// `trace:<path>` for an external trace file.
pub fn dataset_specs(
    sel: &str,
    model: &EmbeddingModelConfig,
    seed: u64,
) -> Result<Vec<(String, DatasetSpec)>> {
    let mut out = Vec::new();
    for name in sel.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if name == "all" {
            for h in Hotness::ALL {
                out.push((h.name().to_string(), preset_spec(h, model, seed)?));
            }
        } else if let Some(path) = name.strip_prefix("trace:") {
            let kind = DatasetKind::ExternalTrace {
                path: PathBuf::from(path),
            };
            out.push((
                name.to_string(),
                DatasetSpec::new(kind, model.rows_per_table, seed),
            ));
        } else {
            let h = Hotness::parse(name)?;
            out.push((h.name().to_string(), preset_spec(h, model, seed)?));
        }
    }
    if out.is_empty() {
        return Err(invalid("no dataset selected"));
    }
    Ok(out)
}

pub fn preset_spec(h: Hotness, model: &EmbeddingModelConfig, seed: u64) -> Result<DatasetSpec> {
    h.spec(model, seed)
}

pub fn workloads(sel: &str, model: &EmbeddingModelConfig, seed: u64) -> Result<Vec<TableWorkload>> {
    let specs = dataset_specs(sel, model, seed)?;
    specs
        .par_iter()
        .map(|(name, spec)| TableWorkload::generate(name.clone(), spec, model))
        .collect()
}

/// Which tables make up the embedding stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StageTables {
    Homogeneous(Hotness),
    Mix { name: String, mix: TableMix },
}

impl StageTables {
    pub fn label(&self) -> String {
        match self {
            StageTables::Homogeneous(h) => h.name().to_string(),
            StageTables::Mix { name, .. } => name.clone(),
        }
    }

    /// `(table id, hotness, spec)` for every table of the stage.
    pub fn tables(
        &self,
        model: &EmbeddingModelConfig,
        seed: u64,
    ) -> Result<Vec<(u32, Hotness, DatasetSpec)>> {
        match self {
            StageTables::Homogeneous(h) => {
                let kind = h.dataset_kind(model)?;
                Ok((0..model.num_tables)
                    .map(|t| {
                        (
                            t,
                            *h,
                            DatasetSpec::new(
                                kind.clone(),
                                model.rows_per_table,
                                table_seed(seed, t),
                            ),
                        )
                    })
                    .collect())
            }
            StageTables::Mix { mix, .. } => build_mix(mix, model, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableTime {
    pub table_id: u32,
    pub hotness: Hotness,
    pub kernel_time_us: f64,
    /// False when the time was copied from the table simulated for its group.
    pub simulated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub plan: String,
    pub stage: String,
    pub tables: Vec<TableTime>,
    pub embedding_us: f64,
    pub end2end: EndToEnd,
    /// Over the first plan of the run on the same stage.
    pub speedup: f64,
    /// One report per simulated table.
    pub reports: Vec<Report>,
}

/// Runs every plan over every stage. Tables execute one after another, so
/// the stage time is the sum of the per-table kernel times. With
/// `replicate`, one table per hotness group is simulated and its time
/// stands in for the rest of the group.
pub fn run(exp: &ResolvedExperiment) -> Result<Vec<StageResult>> {
    let setup = &exp.setup;
    let mut out = Vec::new();
    for stage in &exp.stages {
        let tables = stage.tables(&setup.model, exp.seed)?;
        let mut reps: Vec<usize> = Vec::new();
        let mut rep_of = vec![0usize; tables.len()];
        for (i, (_, h, _)) in tables.iter().enumerate() {
            let found = if exp.replicate {
                reps.iter().position(|&r| tables[r].1 == *h)
            } else {
                None
            };
            rep_of[i] = match found {
                Some(k) => k,
                None => {
                    reps.push(i);
                    reps.len() - 1
                }
            };
        }
        let loads: Vec<TableWorkload> = reps
            .par_iter()
            .map(|&i| {
                let (t, h, spec) = &tables[i];
                let mut w = TableWorkload::generate(h.name(), spec, &setup.model)?;
                w.trace.table_id = *t;
                Ok(w)
            })
            .collect::<Result<_>>()?;
        let jobs: Vec<(usize, usize)> = (0..exp.plans.len())
            .flat_map(|p| (0..loads.len()).map(move |w| (p, w)))
            .collect();
        let sims = jobs
            .par_iter()
            .map(|&(p, w)| simulate_point(setup, &loads[w], &exp.plans[p]))
            .collect::<Result<Vec<_>>>()?;
        let mut first_time = None;
        for (p, plan) in exp.plans.iter().enumerate() {
            let res = &sims[p * loads.len()..(p + 1) * loads.len()];
            let table_times: Vec<TableTime> = tables
                .iter()
                .enumerate()
                .map(|(i, (t, h, _))| TableTime {
                    table_id: *t,
                    hotness: *h,
                    kernel_time_us: res[rep_of[i]].metrics.kernel_time_us,
                    simulated: reps[rep_of[i]] == i,
                })
                .collect();
            let embedding_us: f64 = table_times.iter().map(|t| t.kernel_time_us).sum();
            let first = *first_time.get_or_insert(embedding_us);
            out.push(StageResult {
                plan: plan.label(),
                stage: stage.label(),
                tables: table_times,
                embedding_us,
                end2end: end2end(embedding_us, &exp.e2e)?,
                speedup: first / embedding_us,
                reports: res.iter().zip(&loads).map(|(r, w)| r.report(w)).collect(),
            });
        }
    }
    Ok(out)
}

/// Single-plan convenience used by the CLI's `end2end`.
pub fn stage_time(
    setup: &SimSetup,
    workload: &TableWorkload,
    plan: &OptimizationPlan,
    tables: u32,
) -> Result<(f64, Report)> {
    let r = simulate_point(setup, workload, plan)?;
    Ok((r.metrics.kernel_time_us * tables as f64, r.report(workload)))
}
