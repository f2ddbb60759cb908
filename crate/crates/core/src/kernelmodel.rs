//! Per-warp instruction streams for the embedding-bag kernel, with explicit
//! dependence edges, for the baseline loop and each prefetching variant.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::workload::{AccessTrace, EmbeddingModelConfig, INDEX_BYTES};

pub const LINE_BYTES: u64 = 128;
pub const WARP_SIZE: u32 = 32;

/// Base addresses of the kernel's memory regions. Rows of the table start at 0.
pub const INDEX_BASE: u64 = 1 << 40;
pub const OUTPUT_BASE: u64 = 2 << 40;
pub const LOCAL_BASE: u64 = 3 << 40;
/// Local memory reserved per resident warp slot.
pub const LOCAL_FRAME_BYTES: u64 = 1 << 16;
/// Offset of the prefetch buffer inside a warp's local frame.
pub const LOCAL_PREFETCH_OFFSET: u64 = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelLaunchConfig {
    pub grid: [u32; 3],
    pub block: [u32; 3],
    pub regs_per_thread: u32,
    pub shared_bytes_per_block: u32,
}

impl Default for KernelLaunchConfig {
    fn default() -> Self {
        KernelLaunchConfig {
            grid: [1024, 1, 1],
            block: [32, 8, 1],
            regs_per_thread: 74,
            shared_bytes_per_block: 0,
        }
    }
}

impl KernelLaunchConfig {
    pub fn threads_per_block(&self) -> u32 {
        self.block.iter().product()
    }

    pub fn num_blocks(&self) -> u32 {
        self.grid.iter().product()
    }

    pub fn warps_per_block(&self) -> Result<u32> {
        let t = self.threads_per_block();
        if t == 0 || t % WARP_SIZE != 0 {
            return Err(Error::Config(format!(
                "threads per block {t} is not a positive multiple of {WARP_SIZE}"
            )));
        }
        Ok(t / WARP_SIZE)
    }

    pub fn total_warps(&self) -> Result<u32> {
        Ok(self.warps_per_block()? * self.num_blocks())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefetchKind {
    None,
    Rpf,
    Smpf,
    Lmpf,
    L1dpf,
}

/// Where prefetched data waits until it is consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Station {
    Register,
    Shared,
    Local,
    L1,
}

impl PrefetchKind {
    pub const SCHEMES: [PrefetchKind; 4] = [
        PrefetchKind::Rpf,
        PrefetchKind::Smpf,
        PrefetchKind::Lmpf,
        PrefetchKind::L1dpf,
    ];

    pub fn station(self) -> Station {
        match self {
            PrefetchKind::None | PrefetchKind::Rpf => Station::Register,
            PrefetchKind::Smpf => Station::Shared,
            PrefetchKind::Lmpf => Station::Local,
            PrefetchKind::L1dpf => Station::L1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrefetchKind::None => "none",
            PrefetchKind::Rpf => "rpf",
            PrefetchKind::Smpf => "smpf",
            PrefetchKind::Lmpf => "lmpf",
            PrefetchKind::L1dpf => "l1dpf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            PrefetchKind::None,
            PrefetchKind::Rpf,
            PrefetchKind::Smpf,
            PrefetchKind::Lmpf,
            PrefetchKind::L1dpf,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| invalid(format!("unknown prefetch scheme '{s}'")))
    }

    /// Distance used when a scheme is requested without one.
    pub fn default_distance(self) -> u32 {
        match self {
            PrefetchKind::None => 0,
            PrefetchKind::Rpf => 4,
            PrefetchKind::Smpf | PrefetchKind::Lmpf => 10,
            PrefetchKind::L1dpf => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrefetchScheme {
    pub kind: PrefetchKind,
    pub distance: u32,
}

impl PrefetchScheme {
    pub const NONE: PrefetchScheme = PrefetchScheme {
        kind: PrefetchKind::None,
        distance: 0,
    };

    pub fn new(kind: PrefetchKind, distance: u32) -> Result<Self> {
        let s = PrefetchScheme { kind, distance };
        s.validate()?;
        Ok(s)
    }

    pub fn with_default_distance(kind: PrefetchKind) -> Self {
        PrefetchScheme {
            kind,
            distance: kind.default_distance(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != PrefetchKind::None && self.distance == 0 {
            return Err(invalid(format!(
                "{} needs a distance >= 1",
                self.kind.name()
            )));
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        self.kind == PrefetchKind::None
    }
}

impl fmt::Display for PrefetchScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_none() {
            write!(f, "none")
        } else {
            write!(f, "{}:{}", self.kind.name(), self.distance)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarpWork {
    pub sample: u32,
    pub dim_block: u32,
    pub active_lanes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkMap {
    pub warps_per_sample: u32,
    pub warps_per_block: u32,
    pub num_blocks: u32,
    pub batch_size: u32,
    pub embedding_dim: u32,
}

impl WorkMap {
    /// Warps that carry work; the remaining warps of the grid exit at once.
    pub fn active_warps(&self) -> u32 {
        self.batch_size * self.warps_per_sample
    }

    pub fn total_warps(&self) -> u32 {
        self.warps_per_block * self.num_blocks
    }

    pub fn warp_work(&self, global_warp: u32) -> Option<WarpWork> {
        if global_warp >= self.active_warps() {
            return None;
        }
        let dim_block = global_warp % self.warps_per_sample;
        let active_lanes = (self.embedding_dim - dim_block * WARP_SIZE).min(WARP_SIZE);
        Some(WarpWork {
            sample: global_warp / self.warps_per_sample,
            dim_block,
            active_lanes,
        })
    }

    /// `(sample, embedding element)` computed by one thread, if any.
    pub fn element(&self, block: u32, warp: u32, lane: u32) -> Option<(u32, u32)> {
        let w = self.warp_work(block * self.warps_per_block + warp)?;
        (lane < w.active_lanes).then_some((w.sample, w.dim_block * WARP_SIZE + lane))
    }
}

pub fn partition(model: &EmbeddingModelConfig, launch: &KernelLaunchConfig) -> Result<WorkMap> {
    model.validate()?;
    let warps_per_block = launch.warps_per_block()?;
    let map = WorkMap {
        warps_per_sample: model.embedding_dim.div_ceil(WARP_SIZE),
        warps_per_block,
        num_blocks: launch.num_blocks(),
        batch_size: model.batch_size,
        embedding_dim: model.embedding_dim,
    };
    if (map.active_warps() as u64) > map.total_warps() as u64 {
        return Err(Error::Config(format!(
            "launch provides {} warps but the batch needs {}",
            map.total_warps(),
            map.active_warps()
        )));
    }
    Ok(map)
}

/// Byte address of the line holding `dim_block` of `row`.
pub fn line_request(row: u32, dim_block: u32, row_bytes: u64) -> u64 {
    row as u64 * row_bytes + dim_block as u64 * LINE_BYTES
}

fn index_line(sample: u32, lookup: u32, pooling: u32) -> u64 {
    let a = INDEX_BASE + (sample as u64 * pooling as u64 + lookup as u64) * INDEX_BYTES;
    a & !(LINE_BYTES - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    /// Integer/address arithmetic occupying `n` issue slots.
    Alu(u32),
    LoadIndex,
    LoadRow,
    Prefetch(Station),
    ConsumeAdd(Station),
    /// Local-memory load touching `lines` consecutive lines.
    LoadLocal {
        lines: u32,
    },
    StoreLocal {
        lines: u32,
    },
    StoreOut,
}

impl Op {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            Op::Alu(_) => "ALU",
            Op::LoadIndex => "LOAD_INDEX",
            Op::LoadRow => "LOAD_ROW",
            Op::Prefetch(_) => "PREFETCH",
            Op::ConsumeAdd(_) => "CONSUME_ADD",
            Op::LoadLocal { .. } => "LOAD_LOCAL",
            Op::StoreLocal { .. } => "STORE_LOCAL",
            Op::StoreOut => "STORE_OUT",
        }
    }

    /// Issue slots taken by this instruction.
    pub fn issue_cost(&self) -> u32 {
        match self {
            Op::Alu(n) => *n,
            _ => 1,
        }
    }

    /// Counted as an executed load instruction.
    pub fn is_load(&self) -> bool {
        matches!(
            self,
            Op::LoadIndex
                | Op::LoadRow
                | Op::LoadLocal { .. }
                | Op::Prefetch(Station::Register | Station::Shared | Station::Local)
        )
    }

    /// Lines moved through the SM's L1 data pipeline.
    pub fn l1_lines(&self) -> u32 {
        match self {
            Op::Alu(_) | Op::ConsumeAdd(Station::Register | Station::Local | Station::L1) => 0,
            Op::LoadLocal { lines } | Op::StoreLocal { lines } => *lines,
            _ => 1,
        }
    }

    /// Holds a scoreboard slot until its data returns.
    pub fn uses_scoreboard(&self) -> bool {
        matches!(
            self,
            Op::LoadIndex
                | Op::LoadRow
                | Op::LoadLocal { .. }
                | Op::Prefetch(Station::Register | Station::Local)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instr {
    pub op: Op,
    /// Line address for memory operations; frame offset for local ops.
    pub addr: u64,
    /// Index of the producing instruction within the same program.
    pub dep: Option<u32>,
}

impl Instr {
    fn new(op: Op, addr: u64, dep: Option<u32>) -> Self {
        Instr { op, addr, dep }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WarpProgram {
    pub warp_id: u32,
    pub instrs: Vec<Instr>,
    /// Requested distance when it had to be clamped to the pooling factor.
    pub clamped_distance: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProgramCounts {
    pub issue_slots: u64,
    pub loads: u64,
    pub load_index: u64,
    pub load_row: u64,
    pub prefetch: u64,
    pub consume: u64,
    pub load_local: u64,
    pub store_local: u64,
    pub store_out: u64,
}

impl WarpProgram {
    pub fn counts(&self) -> ProgramCounts {
        let mut c = ProgramCounts::default();
        for i in &self.instrs {
            c.issue_slots += i.op.issue_cost() as u64;
            c.loads += i.op.is_load() as u64;
            match i.op {
                Op::LoadIndex => c.load_index += 1,
                Op::LoadRow => c.load_row += 1,
                Op::Prefetch(_) => c.prefetch += 1,
                Op::ConsumeAdd(_) => c.consume += 1,
                Op::LoadLocal { .. } => c.load_local += 1,
                Op::StoreLocal { .. } => c.store_local += 1,
                Op::StoreOut => c.store_out += 1,
                Op::Alu(_) => {}
            }
        }
        c
    }

    /// Checks that dependences point strictly backwards and that every
    /// consume is fed by a row load, a prefetch, or a buffered local read.
    pub fn validate(&self) -> Result<()> {
        for (pc, ins) in self.instrs.iter().enumerate() {
            if let Some(d) = ins.dep {
                if d as usize >= pc {
                    return Err(Error::MalformedProgram(format!(
                        "warp {} instruction {pc} depends on {d}, which does not precede it",
                        self.warp_id
                    )));
                }
            }
            if let Op::ConsumeAdd(_) = ins.op {
                let src = self.consumed_prefetch_or_load(pc);
                if src.is_none() {
                    return Err(Error::MalformedProgram(format!(
                        "warp {} consume at {pc} has no producing load",
                        self.warp_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// The row load or prefetch whose data the consume at `pc` adds.
    pub fn consumed_prefetch_or_load(&self, pc: usize) -> Option<usize> {
        let mut d = self.instrs[pc].dep? as usize;
        loop {
            match self.instrs[d].op {
                Op::LoadRow | Op::Prefetch(_) => return Some(d),
                Op::LoadLocal { .. } | Op::StoreLocal { .. } => d = self.instrs[d].dep? as usize,
                _ => return None,
            }
        }
    }

    pub fn dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        for i in &self.instrs {
            let dep = i.dep.map_or("-".to_string(), |d| d.to_string());
            match i.op {
                Op::Alu(n) => writeln!(w, "{} ALU {} {}", self.warp_id, n, dep)?,
                _ => writeln!(
                    w,
                    "{} {} {:#x} {}",
                    self.warp_id,
                    i.op.mnemonic(),
                    i.addr,
                    dep
                )?,
            }
        }
        Ok(())
    }
}

/// Instruction overheads of the kernel around its loads and adds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelCostModel {
    /// Loop control and address arithmetic per lookup.
    pub alu_per_lookup: u32,
    /// Work independent of the fetched row, scheduled between its load and
    /// the add.
    pub alu_before_use: u32,
    /// Address arithmetic per issued prefetch.
    pub prefetch_alu: u32,
    /// Batch setup per prefetch batch (bounds checks, buffer indexing).
    pub batch_alu: u32,
}

impl Default for KernelCostModel {
    fn default() -> Self {
        KernelCostModel {
            alu_per_lookup: 12,
            alu_before_use: 12,
            prefetch_alu: 9,
            batch_alu: 10,
        }
    }
}

/// Local-memory traffic induced by register spilling, per warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpillPlan {
    /// Spilled registers per thread; each occupies one line per warp.
    pub spilled_regs: u32,
    /// Local load instructions per loop iteration.
    pub loads_per_iter: u32,
    /// Lines touched by one local load instruction (vectorized reloads).
    pub lines_per_load: u32,
    /// Spilled lines the loop's reloads cycle through.
    pub loop_lines: u32,
}

impl SpillPlan {
    pub fn is_empty(&self) -> bool {
        self.loads_per_iter == 0
    }

    fn load_offset(&self, iteration: u32, k: u32) -> u64 {
        let footprint = self.loop_lines.max(1) as u64;
        let start = ((iteration as u64 * self.loads_per_iter as u64 + k as u64)
            * self.lines_per_load as u64)
            % footprint;
        start * LINE_BYTES
    }
}

struct Builder {
    instrs: Vec<Instr>,
}

impl Builder {
    fn push(&mut self, op: Op, addr: u64, dep: Option<u32>) -> u32 {
        self.instrs.push(Instr::new(op, addr, dep));
        (self.instrs.len() - 1) as u32
    }

    fn alu(&mut self, n: u32, dep: Option<u32>) {
        if n > 0 || dep.is_some() {
            self.push(Op::Alu(n.max(1)), 0, dep);
        }
    }

    /// Spill reloads of one iteration followed by its loop arithmetic, which
    /// consumes the reloaded values.
    fn iteration_head(&mut self, spill: &SpillPlan, y: u32, alu: u32) {
        let mut last = None;
        for k in 0..spill.loads_per_iter {
            let lines = spill.lines_per_load.min(spill.loop_lines.max(1));
            last = Some(self.push(Op::LoadLocal { lines }, spill.load_offset(y, k), None));
        }
        self.alu(alu, last);
    }
}

pub struct SynthesisInput<'a> {
    pub warp_id: u32,
    pub work: WarpWork,
    pub rows: &'a [u32],
    pub pooling: u32,
    pub row_bytes: u64,
    pub embedding_dim: u32,
}

pub fn synthesize_program(
    input: &SynthesisInput<'_>,
    scheme: &PrefetchScheme,
    costs: &KernelCostModel,
    spill: &SpillPlan,
) -> WarpProgram {
    let pf = input.rows.len() as u32;
    let mut b = Builder { instrs: Vec::new() };
    let row_line = |y: u32| {
        line_request(
            input.rows[y as usize],
            input.work.dim_block,
            input.row_bytes,
        )
    };
    let idx_line = |y: u32| index_line(input.work.sample, y, input.pooling);

    if !spill.is_empty() {
        let lines = spill.lines_per_load.min(spill.spilled_regs.max(1));
        let stores = spill.spilled_regs.div_ceil(lines.max(1));
        for k in 0..stores {
            b.push(
                Op::StoreLocal { lines },
                k as u64 * lines as u64 * LINE_BYTES,
                None,
            );
        }
    }

    let mut clamped = None;
    let mut d = scheme.distance;
    if !scheme.is_none() && d > pf {
        log::warn!("prefetch distance {d} exceeds pooling factor {pf}; clamped");
        clamped = Some(d);
        d = pf.max(1);
    }

    match scheme.kind {
        PrefetchKind::None => {
            for y in 0..pf {
                let i = b.push(Op::LoadIndex, idx_line(y), None);
                b.iteration_head(spill, y, costs.alu_per_lookup);
                let r = b.push(Op::LoadRow, row_line(y), Some(i));
                b.alu(costs.alu_before_use, None);
                b.push(Op::ConsumeAdd(Station::Register), 0, Some(r));
            }
        }
        PrefetchKind::Rpf | PrefetchKind::Smpf | PrefetchKind::Lmpf => {
            let station = scheme.kind.station();
            let mut y0 = 0;
            while y0 < pf {
                let n = d.min(pf - y0);
                b.alu(costs.batch_alu, None);
                let idx: Vec<u32> = (0..n)
                    .map(|j| b.push(Op::LoadIndex, idx_line(y0 + j), None))
                    .collect();
                let pre: Vec<u32> = (0..n)
                    .map(|j| {
                        b.alu(costs.prefetch_alu, None);
                        let addr = row_line(y0 + j);
                        b.push(Op::Prefetch(station), addr, Some(idx[j as usize]))
                    })
                    .collect();
                // The local-memory station spills each prefetched row to the
                // warp's buffer once it arrives.
                let staged: Vec<u32> = if station == Station::Local {
                    (0..n)
                        .map(|j| {
                            let off = LOCAL_PREFETCH_OFFSET + j as u64 * LINE_BYTES;
                            b.push(Op::StoreLocal { lines: 1 }, off, Some(pre[j as usize]))
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                for j in 0..n {
                    b.iteration_head(spill, y0 + j, costs.alu_per_lookup);
                    let src = if station == Station::Local {
                        let off = LOCAL_PREFETCH_OFFSET + j as u64 * LINE_BYTES;
                        b.push(Op::LoadLocal { lines: 1 }, off, Some(staged[j as usize]))
                    } else {
                        pre[j as usize]
                    };
                    b.alu(costs.alu_before_use, None);
                    b.push(Op::ConsumeAdd(station), 0, Some(src));
                }
                y0 += n;
            }
        }
        PrefetchKind::L1dpf => {
            let hint = |b: &mut Builder, y: u32| {
                let i = b.push(Op::LoadIndex, idx_line(y), None);
                b.alu(costs.prefetch_alu, None);
                b.push(Op::Prefetch(Station::L1), row_line(y), Some(i));
            };
            for y in 0..d.min(pf) {
                hint(&mut b, y);
            }
            for y in 0..pf {
                b.iteration_head(spill, y, costs.alu_per_lookup);
                if y + d < pf {
                    hint(&mut b, y + d);
                }
                let i = b.push(Op::LoadIndex, idx_line(y), None);
                let r = b.push(Op::LoadRow, row_line(y), Some(i));
                b.alu(costs.alu_before_use, None);
                b.push(Op::ConsumeAdd(Station::Register), 0, Some(r));
            }
        }
    }
    let out = OUTPUT_BASE
        + (input.work.sample as u64 * input.embedding_dim as u64
            + input.work.dim_block as u64 * WARP_SIZE as u64)
            * 4;
    b.push(Op::StoreOut, out & !(LINE_BYTES - 1), None);

    WarpProgram {
        warp_id: input.warp_id,
        instrs: b.instrs,
        clamped_distance: clamped,
    }
}

/// Supplies warp programs to the simulator on demand.
pub trait ProgramSource: Sync {
    fn warps_per_block(&self) -> u32;
    fn num_blocks(&self) -> u32;
    fn program(&self, global_warp: u32) -> WarpProgram;
}

/// The kernel for one table: trace, scheme, and spill behavior.
pub struct EmbeddingKernel<'a> {
    pub trace: &'a AccessTrace,
    pub map: WorkMap,
    pub scheme: PrefetchScheme,
    pub costs: KernelCostModel,
    pub spill: SpillPlan,
    pub row_bytes: u64,
}

impl<'a> EmbeddingKernel<'a> {
    pub fn new(
        trace: &'a AccessTrace,
        model: &EmbeddingModelConfig,
        launch: &KernelLaunchConfig,
        scheme: PrefetchScheme,
        costs: KernelCostModel,
        spill: SpillPlan,
    ) -> Result<Self> {
        scheme.validate()?;
        let map = partition(model, launch)?;
        if trace.samples != model.batch_size || trace.pooling != model.pooling_factor {
            return Err(Error::WorkloadMismatch(format!(
                "trace shape {}x{} does not match model {}x{}",
                trace.samples, trace.pooling, model.batch_size, model.pooling_factor
            )));
        }
        Ok(EmbeddingKernel {
            trace,
            map,
            scheme,
            costs,
            spill,
            row_bytes: model.row_bytes(),
        })
    }
}

impl ProgramSource for EmbeddingKernel<'_> {
    fn warps_per_block(&self) -> u32 {
        self.map.warps_per_block
    }

    fn num_blocks(&self) -> u32 {
        self.map.num_blocks
    }

    fn program(&self, global_warp: u32) -> WarpProgram {
        let Some(work) = self.map.warp_work(global_warp) else {
            return WarpProgram {
                warp_id: global_warp,
                ..Default::default()
            };
        };
        let input = SynthesisInput {
            warp_id: global_warp,
            work,
            rows: self.trace.sample(work.sample),
            pooling: self.trace.pooling,
            row_bytes: self.row_bytes,
            embedding_dim: self.map.embedding_dim,
        };
        synthesize_program(&input, &self.scheme, &self.costs, &self.spill)
    }
}

/// Explicit program list, mainly for micro-benchmarks and tests.
pub struct ProgramList {
    pub warps_per_block: u32,
    pub programs: Vec<WarpProgram>,
}

impl ProgramSource for ProgramList {
    fn warps_per_block(&self) -> u32 {
        self.warps_per_block
    }

    fn num_blocks(&self) -> u32 {
        (self.programs.len() as u32).div_ceil(self.warps_per_block)
    }

    fn program(&self, global_warp: u32) -> WarpProgram {
        self.programs
            .get(global_warp as usize)
            .cloned()
            .unwrap_or(WarpProgram {
                warp_id: global_warp,
                ..Default::default()
            })
    }
}
