//! Optimization levers (register budget, software prefetching, L2 pinning),
//! their composition, single-point simulation and parameter sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernelmodel::{
    line_request, EmbeddingKernel, KernelCostModel, KernelLaunchConfig, PrefetchKind,
    PrefetchScheme, SpillPlan, LINE_BYTES, WARP_SIZE,
};
use crate::metrics::{derive_report, Report, SimMetrics};
use crate::simcore::{
    new_l2, occupancy, simulate_kernel, Cache, GpuConfig, OccupancyResult, RawCounters, SimOptions,
    SpillModel,
};
use crate::workload::{
    gen_pool, gen_trace, hot_indices, AccessTrace, DatasetSpec, EmbeddingModelConfig,
    HotnessHistogram,
};

pub const MIN_REGS: u32 = 16;

/// Register budget and resulting local-memory behavior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxRegVariant {
    pub launch: KernelLaunchConfig,
    pub spill: SpillPlan,
}

pub fn apply_maxreg(
    regs: u32,
    regs_needed: u32,
    launch: &KernelLaunchConfig,
    spill: &SpillModel,
) -> Result<MaxRegVariant> {
    if regs < MIN_REGS {
        return Err(invalid(format!(
            "register budget {regs} below the minimum {MIN_REGS}"
        )));
    }
    Ok(MaxRegVariant {
        launch: KernelLaunchConfig {
            regs_per_thread: regs,
            ..*launch
        },
        spill: spill.plan(regs_needed, regs),
    })
}

/// Register cap that leaves room for `warps` resident warps per SM.
pub fn regs_for_warps(warps: u32, gpu: &GpuConfig) -> Result<u32> {
    if warps == 0 || warps > gpu.max_warps_per_sm {
        return Err(invalid(format!(
            "warp count {warps} outside [1, {}]",
            gpu.max_warps_per_sm
        )));
    }
    Ok(gpu.regfile_regs_per_sm / (warps * WARP_SIZE))
}

/// Largest register count not above `regs_needed` whose occupancy reaches
/// `warps` (the rounding of register allocation makes this coarser than the
/// plain division).
pub fn regs_reaching_warps(
    warps: u32,
    regs_needed: u32,
    launch: &KernelLaunchConfig,
    gpu: &GpuConfig,
) -> Result<u32> {
    let start = regs_for_warps(warps, gpu)?.clamp(MIN_REGS, regs_needed.max(MIN_REGS));
    let mut best = None;
    for r in MIN_REGS..=regs_needed.max(start) {
        if r <= regs_needed && occupancy(r, launch, gpu)?.warps_per_sm >= warps {
            best = Some(r);
        }
    }
    best.ok_or_else(|| invalid(format!("no register budget reaches {warps} warps")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablePin {
    pub table_id: u32,
    pub rows: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinPlan {
    pub tables: Vec<TablePin>,
    pub setaside_bytes: u64,
    pub rows_pinned: u64,
    /// Line fills performed by the pinning pass before the kernel.
    pub pin_phase_fills: u64,
}

pub fn build_pin_plan(
    hist: &HotnessHistogram,
    table_id: u32,
    gpu: &GpuConfig,
    model: &EmbeddingModelConfig,
    setaside_bytes: u64,
) -> Result<PinPlan> {
    let max = gpu.l2.max_setaside_bytes();
    if setaside_bytes > max {
        return Err(invalid(format!(
            "set-aside {setaside_bytes} B exceeds the maximum {max} B"
        )));
    }
    let row_bytes = model.row_bytes();
    let k = (setaside_bytes / row_bytes) as usize;
    if k == 0 {
        log::warn!(
            "row of {row_bytes} B does not fit a {setaside_bytes} B set-aside; nothing pinned"
        );
    }
    let rows = hot_indices(hist, k);
    let lines_per_row = row_bytes.div_ceil(LINE_BYTES);
    Ok(PinPlan {
        rows_pinned: rows.len() as u64,
        pin_phase_fills: rows.len() as u64 * lines_per_row,
        tables: vec![TablePin { table_id, rows }],
        setaside_bytes,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimeReport {
    pub lines_pinned: u64,
    pub rows_skipped: u64,
}

/// Loads every line of the plan's rows into `l2` with the pin flag. Rows that
/// no longer fit the set-aside budget are skipped.
pub fn prime_pins(plan: &PinPlan, l2: &mut Cache, row_bytes: u64) -> PrimeReport {
    let mut rep = PrimeReport::default();
    let lines = row_bytes.div_ceil(LINE_BYTES) as u32;
    for t in &plan.tables {
        for &row in &t.rows {
            if l2.pinned_bytes() + lines as u64 * LINE_BYTES > l2.pin_budget_bytes() {
                rep.rows_skipped += 1;
                continue;
            }
            for k in 0..lines {
                l2.fill(line_request(row, k, row_bytes), 0, true);
                rep.lines_pinned += 1;
            }
        }
    }
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinRequest {
    /// Defaults to the device's maximum set-aside.
    #[serde(default)]
    pub setaside_bytes: Option<u64>,
}

/// One experiment point: any subset of the three levers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizationPlan {
    /// Register cap per thread; `None` compiles unconstrained.
    pub regs: Option<u32>,
    pub scheme: PrefetchScheme,
    pub pin: Option<PinRequest>,
}

impl Default for OptimizationPlan {
    fn default() -> Self {
        Self::baseline()
    }
}

impl OptimizationPlan {
    pub const OPTMT_REGS: u32 = 42;
    /// Prefetch distance used atop a register cap when none is given.
    pub const CAPPED_DISTANCE: u32 = 2;

    pub fn baseline() -> Self {
        OptimizationPlan {
            regs: None,
            scheme: PrefetchScheme::NONE,
            pin: None,
        }
    }

    pub fn optmt() -> Self {
        OptimizationPlan {
            regs: Some(Self::OPTMT_REGS),
            ..Self::baseline()
        }
    }

    pub fn l2p() -> Self {
        OptimizationPlan {
            pin: Some(PinRequest {
                setaside_bytes: None,
            }),
            ..Self::baseline()
        }
    }

    pub fn prefetch(scheme: PrefetchScheme) -> Self {
        OptimizationPlan {
            scheme,
            ..Self::baseline()
        }
    }

    pub fn regs(regs: u32) -> Self {
        OptimizationPlan {
            regs: Some(regs),
            ..Self::baseline()
        }
    }

    /// Parses `+`-joined lever names such as `rpf+l2p+optmt`, `smpf:10`,
    /// `regs:48` or `baseline`. A scheme without a distance gets its
    /// standalone default, or `CAPPED_DISTANCE` when combined with a
    /// register cap.
    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = Vec::new();
        let mut defaulted = false;
        for tok in s.split('+').map(str::trim) {
            let (name, arg) = match tok.split_once(':') {
                Some((n, a)) => (
                    n,
                    Some(
                        a.parse::<u32>()
                            .map_err(|_| invalid(format!("bad number in '{tok}'")))?,
                    ),
                ),
                None => (tok, None),
            };
            let p = match name {
                "baseline" | "none" => Self::baseline(),
                "optmt" => Self::optmt(),
                "regs" => {
                    Self::regs(arg.ok_or_else(|| invalid("regs needs a value, e.g. regs:48"))?)
                }
                "l2p" => OptimizationPlan {
                    pin: Some(PinRequest {
                        setaside_bytes: arg.map(|mb| (mb as u64) << 20),
                    }),
                    ..Self::baseline()
                },
                _ => {
                    let kind = PrefetchKind::parse(name)?;
                    defaulted |= arg.is_none();
                    Self::prefetch(PrefetchScheme::new(
                        kind,
                        arg.unwrap_or(kind.default_distance()),
                    )?)
                }
            };
            parts.push(p);
        }
        let mut plan = combine(&parts)?;
        if defaulted && plan.regs.is_some() {
            plan.scheme.distance = Self::CAPPED_DISTANCE;
        }
        Ok(plan)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if !self.scheme.is_none() {
            parts.push(self.scheme.to_string());
        }
        if let Some(p) = self.pin {
            parts.push(match p.setaside_bytes {
                Some(b) => format!("l2p:{}", b >> 20),
                None => "l2p".into(),
            });
        }
        match self.regs {
            Some(Self::OPTMT_REGS) => parts.push("optmt".into()),
            Some(r) => parts.push(format!("regs:{r}")),
            None => {}
        }
        if parts.is_empty() {
            "baseline".into()
        } else {
            parts.join("+")
        }
    }
}

/// Merges plans that each set disjoint levers.
pub fn combine(plans: &[OptimizationPlan]) -> Result<OptimizationPlan> {
    let mut out = OptimizationPlan::baseline();
    for p in plans {
        if let Some(r) = p.regs {
            if out.regs.is_some_and(|x| x != r) {
                return Err(invalid("conflicting register budgets"));
            }
            out.regs = Some(r);
        }
        if !p.scheme.is_none() {
            if !out.scheme.is_none() && out.scheme != p.scheme {
                return Err(invalid("conflicting prefetch schemes"));
            }
            out.scheme = p.scheme;
        }
        if let Some(pin) = p.pin {
            if out.pin.is_some_and(|x| x != pin) {
                return Err(invalid("conflicting pin requests"));
            }
            out.pin = Some(pin);
        }
    }
    Ok(out)
}

/// Lever costs that are not properties of the GPU or the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeverCosts {
    /// Extra registers per thread per unit of register-prefetch distance.
    pub rpf_regs_per_distance: u32,
    /// Shared-memory buffer per warp per unit of distance.
    pub smpf_bytes_per_distance: u32,
    /// Registers the shared-memory prefetching kernel compiles to.
    pub smpf_regs: u32,
    /// Add the pinning pass to the kernel time.
    pub charge_pin_phase: bool,
}

impl Default for LeverCosts {
    fn default() -> Self {
        LeverCosts {
            rpf_regs_per_distance: 2,
            smpf_bytes_per_distance: 640,
            smpf_regs: 74,
            charge_pin_phase: false,
        }
    }
}

/// Everything fixed across the points of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetup {
    pub gpu: GpuConfig,
    pub model: EmbeddingModelConfig,
    pub launch: KernelLaunchConfig,
    pub costs: KernelCostModel,
    pub spill: SpillModel,
    pub levers: LeverCosts,
    #[serde(skip)]
    pub infinite_bandwidth: bool,
}

impl SimSetup {
    pub fn new(gpu: GpuConfig, model: EmbeddingModelConfig) -> Self {
        SimSetup {
            gpu,
            model,
            launch: KernelLaunchConfig::default(),
            costs: KernelCostModel::default(),
            spill: SpillModel::default(),
            levers: LeverCosts::default(),
            infinite_bandwidth: false,
        }
    }

    pub fn a100() -> Self {
        Self::new(GpuConfig::a100(), EmbeddingModelConfig::default())
    }

    /// Registers the kernel asks for under a given prefetch scheme.
    pub fn regs_needed(&self, scheme: &PrefetchScheme) -> u32 {
        let base = self.spill.regs_needed;
        match scheme.kind {
            PrefetchKind::Rpf => {
                base + self.levers.rpf_regs_per_distance * scheme.distance.saturating_sub(1)
            }
            PrefetchKind::Smpf => self.levers.smpf_regs,
            _ => base,
        }
    }

    pub fn shared_bytes_per_block(&self, scheme: &PrefetchScheme) -> Result<u32> {
        Ok(match scheme.kind {
            PrefetchKind::Smpf => {
                let d = scheme.distance.min(self.model.pooling_factor);
                d * self.levers.smpf_bytes_per_distance * self.launch.warps_per_block()?
            }
            _ => 0,
        })
    }
}

/// A table's kernel input plus the profile used for pin planning.
#[derive(Debug, Clone)]
pub struct TableWorkload {
    pub name: String,
    pub trace: AccessTrace,
    pub profile: HotnessHistogram,
}

impl TableWorkload {
    pub fn generate(
        name: impl Into<String>,
        spec: &DatasetSpec,
        model: &EmbeddingModelConfig,
    ) -> Result<Self> {
        let trace = gen_trace(spec, model)?;
        let pool = gen_pool(spec, model)?;
        Ok(TableWorkload {
            name: name.into(),
            trace,
            profile: HotnessHistogram::from_trace(&pool),
        })
    }
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub plan: OptimizationPlan,
    pub raw: RawCounters,
    pub metrics: SimMetrics,
    pub occupancy: OccupancyResult,
    pub regs_allocated: u32,
    pub spill: SpillPlan,
    pub pin: Option<PrimeReport>,
    pub pin_phase_cycles: u64,
}

impl PointResult {
    pub fn report(&self, workload: &TableWorkload) -> Report {
        Report::new(
            self.plan.label(),
            workload.name.clone(),
            workload.trace.digest(),
            self.metrics,
        )
    }
}

pub fn simulate_point(
    setup: &SimSetup,
    workload: &TableWorkload,
    plan: &OptimizationPlan,
) -> Result<PointResult> {
    plan.scheme.validate()?;
    let needed = setup.regs_needed(&plan.scheme);
    let regs = plan.regs.unwrap_or(needed);
    let variant = apply_maxreg(regs, needed, &setup.launch, &setup.spill)?;
    let launch = KernelLaunchConfig {
        shared_bytes_per_block: setup.shared_bytes_per_block(&plan.scheme)?,
        ..variant.launch
    };
    let occ = occupancy(regs, &launch, &setup.gpu)?;

    let mut l2 = new_l2(&setup.gpu, 0);
    let mut pin = None;
    let mut pin_phase_cycles = 0;
    if let Some(req) = plan.pin {
        let budget = req
            .setaside_bytes
            .unwrap_or(setup.gpu.l2.max_setaside_bytes());
        let pp = build_pin_plan(
            &workload.profile,
            workload.trace.table_id,
            &setup.gpu,
            &setup.model,
            budget,
        )?;
        l2 = new_l2(&setup.gpu, budget);
        let rep = prime_pins(&pp, &mut l2, setup.model.row_bytes());
        pin_phase_cycles = (rep.lines_pinned as f64 * LINE_BYTES as f64
            / setup.gpu.hbm_bytes_per_cycle())
        .ceil() as u64
            + setup.gpu.latencies.hbm as u64;
        pin = Some(rep);
    }

    let kernel = EmbeddingKernel::new(
        &workload.trace,
        &setup.model,
        &launch,
        plan.scheme,
        setup.costs,
        variant.spill,
    )?;
    let opts = SimOptions {
        infinite_bandwidth: setup.infinite_bandwidth,
        validate_programs: false,
    };
    let mut raw = simulate_kernel(&kernel, &setup.gpu, &occ, l2, &opts)?;
    if setup.levers.charge_pin_phase {
        raw.cycles += pin_phase_cycles;
    }
    let metrics = derive_report(&raw, &setup.gpu)?;
    Ok(PointResult {
        plan: *plan,
        raw,
        metrics,
        occupancy: occ,
        regs_allocated: regs,
        spill: variant.spill,
        pin,
        pin_phase_cycles,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub dataset: String,
    pub axis_value: u32,
    pub plan: OptimizationPlan,
    pub warps_per_sm: u32,
    pub speedup: f64,
    pub metrics: SimMetrics,
    pub trace_digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub baseline: String,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn point(&self, dataset: &str, axis_value: u32) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| p.dataset == dataset && p.axis_value == axis_value)
    }

    pub fn series(&self, dataset: &str) -> Vec<&SweepPoint> {
        self.points
            .iter()
            .filter(|p| p.dataset == dataset)
            .collect()
    }

    pub fn reports(&self) -> Vec<Report> {
        self.points
            .iter()
            .map(|p| Report {
                axis_value: Some(p.axis_value),
                speedup: Some(p.speedup),
                ..Report::new(
                    p.plan.label(),
                    p.dataset.clone(),
                    p.trace_digest.clone(),
                    p.metrics,
                )
            })
            .collect()
    }
}

/// Simulates every `(workload, axis value)` point, in parallel, and reports
/// speedups over `baseline` on the same workload.
fn sweep(
    setup: &SimSetup,
    workloads: &[TableWorkload],
    axis: &str,
    values: &[(u32, OptimizationPlan)],
    baseline: &OptimizationPlan,
) -> Result<SweepResult> {
    let mut jobs: Vec<(usize, Option<u32>, OptimizationPlan)> = Vec::new();
    for w in 0..workloads.len() {
        jobs.push((w, None, *baseline));
        for &(v, p) in values {
            jobs.push((w, Some(v), p));
        }
    }
    let results: Vec<Result<PointResult>> = jobs
        .par_iter()
        .map(|(w, _, p)| simulate_point(setup, &workloads[*w], p))
        .collect();
    let mut base_time = vec![0.0; workloads.len()];
    let mut points = Vec::new();
    for ((w, v, _), r) in jobs.iter().zip(results) {
        let r = r?;
        match v {
            None => base_time[*w] = r.metrics.kernel_time_us,
            Some(v) => points.push(SweepPoint {
                dataset: workloads[*w].name.clone(),
                axis_value: *v,
                plan: r.plan,
                warps_per_sm: r.occupancy.warps_per_sm,
                speedup: base_time[*w] / r.metrics.kernel_time_us,
                metrics: r.metrics,
                trace_digest: workloads[*w].trace.digest(),
            }),
        }
    }
    Ok(SweepResult {
        axis: axis.into(),
        baseline: baseline.label(),
        points,
    })
}

/// Resident-warp sweep: each warp count maps to the largest register cap
/// that reaches it.
pub fn sweep_wlp(
    setup: &SimSetup,
    workloads: &[TableWorkload],
    warps: &[u32],
) -> Result<SweepResult> {
    let needed = setup.spill.regs_needed;
    let base_warps = occupancy(needed, &setup.launch, &setup.gpu)?.warps_per_sm;
    if !warps.contains(&base_warps) {
        return Err(invalid(format!(
            "warp axis must include the baseline's {base_warps} warps"
        )));
    }
    let values = warps
        .iter()
        .map(|&w| {
            let r = regs_reaching_warps(w, needed, &setup.launch, &setup.gpu)?;
            let plan = if w == base_warps {
                OptimizationPlan::baseline()
            } else {
                OptimizationPlan::regs(r)
            };
            Ok((w, plan))
        })
        .collect::<Result<Vec<_>>>()?;
    sweep(
        setup,
        workloads,
        "warps",
        &values,
        &OptimizationPlan::baseline(),
    )
}

/// Prefetch-distance sweep of one scheme on top of `base`. Axis value 0 is
/// `base` itself without prefetching; speedups are over the plain baseline.
pub fn sweep_prefetch_distance(
    setup: &SimSetup,
    kind: PrefetchKind,
    distances: &[u32],
    workloads: &[TableWorkload],
    base: &OptimizationPlan,
) -> Result<SweepResult> {
    if kind == PrefetchKind::None {
        return Err(invalid("distance sweep needs a prefetch scheme"));
    }
    if distances.contains(&0) {
        return Err(invalid("distances must be >= 1"));
    }
    let mut values = vec![(
        0,
        OptimizationPlan {
            scheme: PrefetchScheme::NONE,
            ..*base
        },
    )];
    for &d in distances {
        values.push((
            d,
            OptimizationPlan {
                scheme: PrefetchScheme::new(kind, d)?,
                ..*base
            },
        ));
    }
    sweep(
        setup,
        workloads,
        "distance",
        &values,
        &OptimizationPlan::baseline(),
    )
}

/// Plans compared side by side on each workload.
pub fn compare(
    setup: &SimSetup,
    workloads: &[TableWorkload],
    plans: &[OptimizationPlan],
) -> Result<SweepResult> {
    let values: Vec<(u32, OptimizationPlan)> = plans
        .iter()
        .enumerate()
        .map(|(i, p)| (i as u32, *p))
        .collect();
    sweep(
        setup,
        workloads,
        "plan",
        &values,
        &OptimizationPlan::baseline(),
    )
}

pub fn check_distance_axis(distances: &[u32]) -> Result<()> {
    if distances.is_empty() || distances.contains(&0) {
        return Err(Error::InvalidArgument(
            "distance axis needs values >= 1".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::DatasetKind;

    #[test]
    fn maxreg_variants() {
        let l = KernelLaunchConfig::default();
        let s = SpillModel::default();
        let gpu = GpuConfig::a100();
        let v = apply_maxreg(74, 74, &l, &s).unwrap();
        assert!(v.spill.is_empty());
        assert_eq!(occupancy(74, &v.launch, &gpu).unwrap().warps_per_sm, 24);
        let v = apply_maxreg(42, 74, &l, &s).unwrap();
        assert_eq!(occupancy(42, &v.launch, &gpu).unwrap().warps_per_sm, 40);
        assert_eq!(v.spill.spilled_regs, 32);
        assert!(apply_maxreg(15, 74, &l, &s).is_err());
        assert_eq!(regs_for_warps(64, &gpu).unwrap(), 32);
        assert_eq!(regs_for_warps(40, &gpu).unwrap(), 51);
    }

    #[test]
    fn sweep_register_mapping() {
        let l = KernelLaunchConfig::default();
        let gpu = GpuConfig::a100();
        let got: Vec<u32> = [24, 32, 40, 48, 64]
            .iter()
            .map(|&w| regs_reaching_warps(w, 74, &l, &gpu).unwrap())
            .collect();
        assert_eq!(got, vec![74, 64, 48, 40, 32]);
    }

    #[test]
    fn plan_parsing_and_labels() {
        let p = OptimizationPlan::parse("rpf+l2p+optmt").unwrap();
        assert_eq!(p.regs, Some(42));
        assert_eq!(p.scheme, PrefetchScheme::new(PrefetchKind::Rpf, 2).unwrap());
        assert!(p.pin.is_some());
        assert_eq!(p.label(), "rpf:2+l2p+optmt");
        assert_eq!(OptimizationPlan::parse("rpf").unwrap().scheme.distance, 4);
        assert_eq!(
            OptimizationPlan::parse("rpf:6+optmt")
                .unwrap()
                .scheme
                .distance,
            6
        );
        assert_eq!(OptimizationPlan::parse(&p.label()).unwrap(), p);
        assert_eq!(
            OptimizationPlan::parse("baseline").unwrap(),
            OptimizationPlan::baseline()
        );
        assert_eq!(
            OptimizationPlan::parse("smpf:7").unwrap().scheme.distance,
            7
        );
        assert!(OptimizationPlan::parse("rpf+smpf").is_err());
        assert!(OptimizationPlan::parse("optmt+regs:30").is_err());
        assert!(OptimizationPlan::parse("bogus").is_err());
        assert_eq!(combine(&[]).unwrap(), OptimizationPlan::baseline());
    }

    #[test]
    fn pin_plan_sizing() {
        let gpu = GpuConfig::a100();
        let model = EmbeddingModelConfig::default();
        let mut counts = vec![0u32; 500_000];
        for (i, c) in counts.iter_mut().enumerate() {
            *c = (i % 7) as u32;
        }
        let hist = HotnessHistogram::from_counts(counts);
        let plan = build_pin_plan(&hist, 0, &gpu, &model, 30 << 20).unwrap();
        assert_eq!(plan.rows_pinned, 61_440);
        assert_eq!(plan.pin_phase_fills, 61_440 * 4);
        let mut l2 = new_l2(&gpu, 30 << 20);
        let rep = prime_pins(&plan, &mut l2, 512);
        assert_eq!(rep.lines_pinned, 245_760);
        assert_eq!(l2.pinned_bytes(), 30 << 20);
        assert_eq!(rep.rows_skipped, 0);
        assert!(build_pin_plan(&hist, 0, &gpu, &model, 31 << 20).is_err());
        let empty = build_pin_plan(&hist, 0, &gpu, &model, 100).unwrap();
        assert_eq!(empty.rows_pinned, 0);
    }

    #[test]
    fn priming_respects_budget() {
        let gpu = GpuConfig::a100();
        let model = EmbeddingModelConfig::default();
        let hist = HotnessHistogram::from_counts((0..1000).map(|i| 1000 - i).collect());
        let plan = build_pin_plan(&hist, 0, &gpu, &model, 512 * 100).unwrap();
        let mut l2 = new_l2(&gpu, 512 * 60);
        let rep = prime_pins(&plan, &mut l2, 512);
        assert_eq!(rep.lines_pinned, 240);
        assert_eq!(rep.rows_skipped, 40);
        assert!(l2.is_pinned(line_request(0, 3, 512)));
    }

    #[test]
    fn one_item_pins_one_row() {
        let model = EmbeddingModelConfig {
            rows_per_table: 1000,
            ..Default::default()
        };
        let spec = DatasetSpec::new(DatasetKind::OneItem, 1000, 1);
        let w = TableWorkload::generate("one", &spec, &model).unwrap();
        let plan = build_pin_plan(&w.profile, 0, &GpuConfig::a100(), &model, 30 << 20).unwrap();
        assert_eq!(plan.rows_pinned, 1);
    }
}
