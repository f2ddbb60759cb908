use std::ffi::OsString;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use super::advisor::{advise, AdviseContext, AdvisorThresholds, Recommendation};
use super::config::{resolve_gpu, ExperimentConfig};
use super::{dataset_specs, end2end, run as run_experiment, stage_time, workloads, EndToEndModel};
use crate::error::{invalid, Result};
use crate::kernelmodel::PrefetchKind;
use crate::metrics::{emit, parse_json, sig4, Format, Report};
use crate::optim::{
    compare, simulate_point, sweep_prefetch_distance, sweep_wlp, OptimizationPlan, SimSetup,
    TableWorkload,
};
use crate::simcore::occupancy;
use crate::workload::{coverage_curve, gen_pool, gen_trace, AccessTrace, EmbeddingModelConfig};

#[derive(Parser, Debug)]
#[command(
    name = "embsim",
    version,
    about = "Warp-level timing simulator for embedding-bag kernels"
)]
struct Cli {
    /// GPU preset (a100, h100) or a TOML file with `preset` plus overrides.
    #[arg(long, global = true, default_value = "a100")]
    gpu: String,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
    #[command(flatten)]
    model: ModelArgs,
    #[command(subcommand)]
    cmd: Command,
}

/// Overrides of the default embedding model.
#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, global = true)]
    tables: Option<u32>,
    #[arg(long, global = true)]
    rows: Option<u64>,
    #[arg(long, global = true)]
    embedding_dim: Option<u32>,
    #[arg(long, global = true)]
    batch_size: Option<u32>,
    #[arg(long, global = true)]
    pooling_factor: Option<u32>,
    /// Ignore register spilling.
    #[arg(long, global = true)]
    no_spill: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a dataset's index trace.
    GenTrace {
        #[arg(long)]
        dataset: String,
        /// Emit the profiling pool instead of the kernel trace.
        #[arg(long)]
        pool: bool,
    },
    /// Access share captured by the hottest unique rows.
    Coverage {
        #[arg(long, conflicts_with = "trace", required_unless_present = "trace")]
        dataset: Option<String>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        buckets: u32,
    },
    /// Simulate one plan on one or more datasets.
    Simulate {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "baseline")]
        plan: String,
    },
    /// Speedup over the baseline for register caps reaching each warp count.
    SweepWlp {
        #[arg(long, value_delimiter = ',', default_value = "24,32,40,48,64")]
        warps: Vec<u32>,
        #[arg(long, default_value = "all")]
        dataset: String,
    },
    /// Speedup over the baseline across prefetch distances.
    SweepDistance {
        /// One or more of rpf, smpf, lmpf, l1dpf.
        #[arg(long, value_delimiter = ',')]
        scheme: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,6,8,10,12,14")]
        distances: Vec<u32>,
        /// Plan the prefetching is layered on, e.g. optmt.
        #[arg(long, default_value = "baseline")]
        base: String,
        #[arg(long, default_value = "all")]
        dataset: String,
    },
    /// Several plans side by side.
    Compare {
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "baseline,optmt,rpf+optmt,l2p+optmt,rpf+l2p+optmt"
        )]
        plans: Vec<String>,
        #[arg(long, default_value = "all")]
        dataset: String,
    },
    /// Embedding share of the end-to-end batch latency.
    End2end {
        #[arg(long, default_value = "random")]
        dataset: String,
        #[arg(long, value_delimiter = ',', default_value = "baseline")]
        plans: Vec<String>,
        /// Use this stage time instead of simulating.
        #[arg(long)]
        embedding_us: Option<f64>,
        #[arg(long, default_value_t = EndToEndModel::DEFAULT_NON_EMBEDDING_US)]
        non_embedding_us: f64,
    },
    /// Walk the profiling steps over a simulated or saved report.
    Advise {
        #[arg(long, required_unless_present = "report")]
        dataset: Option<String>,
        #[arg(long, default_value = "baseline")]
        plan: String,
        /// JSON report from `simulate --format json`; the first entry is used.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run an experiment file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            1
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let format = Format::parse(&cli.format)?;
    let setup = build_setup(cli)?;
    let mut buf = Vec::new();
    match &cli.cmd {
        Command::GenTrace { dataset, pool } => {
            let specs = dataset_specs(dataset, &setup.model, cli.seed)?;
            if specs.len() != 1 {
                return Err(invalid("gen-trace takes a single dataset"));
            }
            let t = if *pool {
                gen_pool(&specs[0].1, &setup.model)?
            } else {
                gen_trace(&specs[0].1, &setup.model)?
            };
            t.write_to(&mut buf)?;
        }
        Command::Coverage {
            dataset,
            trace,
            buckets,
        } => {
            let traces: Vec<(String, AccessTrace)> = match (dataset, trace) {
                (_, Some(p)) => vec![(p.display().to_string(), AccessTrace::load(p)?)],
                (Some(d), None) => dataset_specs(d, &setup.model, cli.seed)?
                    .into_iter()
                    .map(|(n, s)| Ok((n, gen_trace(&s, &setup.model)?)))
                    .collect::<Result<_>>()?,
                (None, None) => return Err(invalid("coverage needs --dataset or --trace")),
            };
            let mut rows = Vec::new();
            for (name, t) in &traces {
                for p in coverage_curve(t, *buckets)?.points {
                    rows.push(vec![
                        json!(name),
                        json!(p.unique_fraction),
                        json!(p.covered_fraction),
                    ]);
                }
            }
            write_table(
                &["dataset", "unique_pct", "covered_pct"],
                &rows,
                format,
                &mut buf,
            )?;
        }
        Command::Simulate { dataset, plan } => {
            let plan = OptimizationPlan::parse(plan)?;
            let ws = workloads(dataset, &setup.model, cli.seed)?;
            let reports = ws
                .iter()
                .map(|w| Ok(simulate_point(&setup, w, &plan)?.report(w)))
                .collect::<Result<Vec<_>>>()?;
            emit(&reports, format, &mut buf)?;
        }
        Command::SweepWlp { warps, dataset } => {
            let ws = workloads(dataset, &setup.model, cli.seed)?;
            emit(&sweep_wlp(&setup, &ws, warps)?.reports(), format, &mut buf)?;
        }
        Command::SweepDistance {
            scheme,
            distances,
            base,
            dataset,
        } => {
            if scheme.is_empty() {
                return Err(invalid("--scheme is required"));
            }
            let base = OptimizationPlan::parse(base)?;
            let ws = workloads(dataset, &setup.model, cli.seed)?;
            let mut reports = Vec::new();
            for s in scheme {
                reports.extend(
                    sweep_prefetch_distance(
                        &setup,
                        PrefetchKind::parse(s)?,
                        distances,
                        &ws,
                        &base,
                    )?
                    .reports(),
                );
            }
            emit(&reports, format, &mut buf)?;
        }
        Command::Compare { plans, dataset } => {
            let plans = plans
                .iter()
                .map(|p| OptimizationPlan::parse(p))
                .collect::<Result<Vec<_>>>()?;
            let ws = workloads(dataset, &setup.model, cli.seed)?;
            emit(&compare(&setup, &ws, &plans)?.reports(), format, &mut buf)?;
        }
        Command::End2end {
            dataset,
            plans,
            embedding_us,
            non_embedding_us,
        } => {
            let e2e = EndToEndModel {
                non_embedding_latency_us: *non_embedding_us,
            };
            let mut rows = Vec::new();
            let mut push = |plan: &str, ds: &str, emb: f64| -> Result<()> {
                let r = end2end(emb, &e2e)?;
                rows.push(vec![
                    json!(plan),
                    json!(ds),
                    json!(r.embedding_us),
                    json!(r.non_embedding_us),
                    json!(r.total_us),
                    json!(r.embedding_contribution_pct),
                ]);
                Ok(())
            };
            match embedding_us {
                Some(us) => push("given", "-", *us)?,
                None => {
                    let ws = workloads(dataset, &setup.model, cli.seed)?;
                    for p in plans {
                        let plan = OptimizationPlan::parse(p)?;
                        for w in &ws {
                            let (emb, _) = stage_time(&setup, w, &plan, setup.model.num_tables)?;
                            push(&plan.label(), &w.name, emb)?;
                        }
                    }
                }
            }
            write_table(
                &[
                    "plan",
                    "dataset",
                    "embedding_us",
                    "non_embedding_us",
                    "total_us",
                    "embedding_contribution_pct",
                ],
                &rows,
                format,
                &mut buf,
            )?;
        }
        Command::Advise {
            dataset,
            plan,
            report,
        } => {
            let recs = advise_cmd(
                &setup,
                cli.seed,
                dataset.as_deref(),
                plan,
                report.as_deref(),
            )?;
            write_recommendations(&recs, format, &mut buf)?;
        }
        Command::Run { config } => {
            let exp = ExperimentConfig::load(config)?.resolve()?;
            let results = run_experiment(&exp)?;
            let rows: Vec<Vec<Value>> = results
                .iter()
                .map(|r| {
                    vec![
                        json!(r.plan),
                        json!(r.stage),
                        json!(r.tables.len()),
                        json!(r.embedding_us),
                        json!(r.end2end.total_us),
                        json!(r.end2end.embedding_contribution_pct),
                        json!(r.speedup),
                    ]
                })
                .collect();
            let headers = [
                "plan",
                "stage",
                "tables",
                "embedding_us",
                "total_us",
                "embedding_contribution_pct",
                "speedup",
            ];
            write_table(&headers, &rows, format, &mut buf)?;
            if let Some(p) = &exp.output.summary {
                let mut f = Vec::new();
                write_table(&headers, &rows, format_for(p, format), &mut f)?;
                std::fs::write(p, f)?;
            }
            let mut extra: Vec<Report> = results
                .iter()
                .flat_map(|r| r.reports.iter().cloned())
                .collect();
            let ws = if exp.wlp_warps.is_some() || exp.distance.is_some() {
                let mut ws = Vec::new();
                for s in &exp.stages {
                    ws.extend(workloads(&s.label(), &exp.setup.model, exp.seed)?);
                }
                ws
            } else {
                Vec::new()
            };
            if let Some(w) = &exp.wlp_warps {
                extra.extend(sweep_wlp(&exp.setup, &ws, w)?.reports());
            }
            if let Some(d) = &exp.distance {
                extra.extend(
                    sweep_prefetch_distance(&exp.setup, d.kind, &d.distances, &ws, &d.base)?
                        .reports(),
                );
            }
            if let Some(p) = &exp.output.reports {
                let mut f = Vec::new();
                emit(&extra, format_for(p, format), &mut f)?;
                std::fs::write(p, f)?;
            }
        }
    }
    match &cli.out {
        Some(p) => std::fs::write(p, &buf)?,
        None => {
            let mut out = BufWriter::new(io::stdout().lock());
            out.write_all(&buf)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn format_for(path: &Path, fallback: Format) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Format::Json,
        Some("csv") => Format::Csv,
        _ => fallback,
    }
}

fn build_setup(cli: &Cli) -> Result<SimSetup> {
    let gpu = resolve_gpu(&cli.gpu)?;
    let d = EmbeddingModelConfig::default();
    let m = &cli.model;
    let model = EmbeddingModelConfig {
        num_tables: m.tables.unwrap_or(d.num_tables),
        rows_per_table: m.rows.unwrap_or(d.rows_per_table),
        embedding_dim: m.embedding_dim.unwrap_or(d.embedding_dim),
        batch_size: m.batch_size.unwrap_or(d.batch_size),
        pooling_factor: m.pooling_factor.unwrap_or(d.pooling_factor),
        ..d
    };
    model.validate()?;
    let mut setup = SimSetup::new(gpu, model);
    setup.spill.enabled = !m.no_spill;
    Ok(setup)
}

fn advise_cmd(
    setup: &SimSetup,
    seed: u64,
    dataset: Option<&str>,
    plan: &str,
    report: Option<&Path>,
) -> Result<Vec<(String, Recommendation)>> {
    let t = AdvisorThresholds::default();
    let ws: Vec<TableWorkload> = match dataset {
        Some(d) => workloads(d, &setup.model, seed)?,
        None => Vec::new(),
    };
    if let Some(path) = report {
        let reports = parse_json(&std::fs::read_to_string(path)?)?;
        let r = reports
            .first()
            .ok_or_else(|| invalid(format!("{} holds no report", path.display())))?;
        let plan = OptimizationPlan::parse(&r.label)?;
        let regs = plan.regs.unwrap_or(setup.regs_needed(&plan.scheme));
        let launch = crate::kernelmodel::KernelLaunchConfig {
            shared_bytes_per_block: setup.shared_bytes_per_block(&plan.scheme)?,
            ..setup.launch
        };
        let occ = occupancy(regs, &launch, &setup.gpu)?;
        let reuse = ws
            .iter()
            .find(|w| w.name == r.dataset)
            .or(ws.first())
            .map(|w| super::advisor::ReuseSummary::from_workload(w, &setup.model));
        let ctx = AdviseContext {
            warps_per_sm: occ.warps_per_sm,
            occupancy_pct: occ.theoretical_occupancy_pct,
            limiter: occ.limiter,
            regs_per_thread: regs,
            reuse,
            plan,
            gpu: setup.gpu.clone(),
        };
        return Ok(vec![(r.dataset.clone(), advise(&r.metrics, &ctx, &t))]);
    }
    let plan = OptimizationPlan::parse(plan)?;
    ws.iter()
        .map(|w| {
            let p = simulate_point(setup, w, &plan)?;
            let ctx = AdviseContext::from_point(&p, w, setup);
            Ok((w.name.clone(), advise(&p.metrics, &ctx, &t)))
        })
        .collect()
}

fn write_recommendations(
    recs: &[(String, Recommendation)],
    format: Format,
    out: &mut Vec<u8>,
) -> Result<()> {
    let mut rows = Vec::new();
    for (ds, rec) in recs {
        for s in &rec.steps {
            let cites: Vec<String> = s
                .metrics
                .iter()
                .map(|(k, v)| format!("{k}={}", sig4(*v)))
                .collect();
            rows.push(vec![
                json!(ds),
                json!(s.id.to_string()),
                json!(s.finding),
                json!(s.action.clone().unwrap_or_default()),
                json!(cites.join(";")),
            ]);
        }
        if rec.is_no_action() {
            rows.push(vec![
                json!(ds),
                json!("-"),
                json!("no action"),
                json!(""),
                json!(""),
            ]);
        }
    }
    write_table(
        &["dataset", "step", "finding", "action", "metrics"],
        &rows,
        format,
        out,
    )
}

/// Writes rows of scalars as CSV (numbers at four significant digits) or as
/// a JSON array of objects.
fn write_table(
    headers: &[&str],
    rows: &[Vec<Value>],
    format: Format,
    out: &mut Vec<u8>,
) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(headers)?;
            for r in rows {
                w.write_record(r.iter().map(|v| match v {
                    Value::String(s) => s.clone(),
                    Value::Number(n) if n.is_f64() => sig4(n.as_f64().unwrap()),
                    Value::Number(n) => n.to_string(),
                    other => other.to_string(),
                }))?;
            }
            w.flush()?;
        }
        Format::Json => {
            let objs: Vec<Value> = rows
                .iter()
                .map(|r| {
                    Value::Object(
                        headers
                            .iter()
                            .map(|h| h.to_string())
                            .zip(r.iter().cloned())
                            .collect(),
                    )
                })
                .collect();
            serde_json::to_writer_pretty(&mut *out, &objs)?;
            out.push(b'\n');
        }
    }
    Ok(())
}
