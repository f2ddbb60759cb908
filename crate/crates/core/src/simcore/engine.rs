//! Event-driven kernel simulation. Each scheduler advances only when it can
//! issue; load completion times are resolved at issue against the cache
//! hierarchy and the device-memory queue, so idle cycles are skipped.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::cache::Cache;
use super::config::GpuConfig;
use super::hbm::HbmQueue;
use super::occupancy::OccupancyResult;
use crate::error::{Error, Result};
use crate::kernelmodel::{Instr, Op, ProgramSource, Station, LINE_BYTES, LOCAL_BASE};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StallBreakdown {
    pub long_scoreboard: u64,
    pub not_selected: u64,
    pub lsu_full: u64,
    pub no_eligible: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounters {
    pub hits: u64,
    pub misses: u64,
}

impl LevelCounters {
    pub fn hit_pct(&self) -> f64 {
        let n = self.hits + self.misses;
        if n == 0 {
            0.0
        } else {
            self.hits as f64 * 100.0 / n as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCounters {
    pub cycles: u64,
    pub issued_instructions: u64,
    pub executed_loads: u64,
    pub stall_cycles_by_reason: StallBreakdown,
    pub l1: LevelCounters,
    pub l2: LevelCounters,
    pub device_bytes_read: u64,
    pub local_memory_loads: u64,
    /// Sum over warps of cycles between launch and retirement.
    pub warp_active_cycles: u64,
    pub active_sms: u32,
    pub schedulers_per_sm: u32,
    pub pin_rejections: u64,
    pub pinned_lines_evicted: u64,
}

impl RawCounters {
    pub fn scheduler_count(&self) -> u64 {
        self.active_sms as u64 * self.schedulers_per_sm as u64
    }

    pub fn check_invariants(&self) -> Result<()> {
        let slots = self.scheduler_count();
        if slots > 0 && self.cycles * slots < self.issued_instructions {
            return Err(Error::InvalidArgument(format!(
                "{} instructions cannot issue in {} cycles on {slots} schedulers",
                self.issued_instructions, self.cycles
            )));
        }
        if self.device_bytes_read != self.l2.misses * LINE_BYTES {
            return Err(Error::InvalidArgument(
                "device bytes disagree with L2 misses".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Remove the device-memory bandwidth cap.
    pub infinite_bandwidth: bool,
    /// Check every program's dependence structure before running it.
    pub validate_programs: bool,
}

const NEVER: u64 = u64::MAX;
const EV_RETIRE: u8 = 0;
const EV_WAKE: u8 = 1;

struct Warp {
    prog: Vec<Instr>,
    done: Vec<u64>,
    pc: usize,
    /// When the current instruction became next in line.
    want: u64,
    dep_ready: u64,
    slot_ready: u64,
    ready: u64,
    outstanding: Vec<u64>,
    last_done: u64,
    launched: u64,
    block: usize,
    frame: u64,
}

struct Scheduler {
    warps: Vec<u32>,
    last: Option<u32>,
    busy_until: u64,
    wake: u64,
    issued: u64,
}

struct Block {
    live: u32,
    finish: u64,
}

struct Sm {
    l1: Cache,
    /// When the L1 data pipeline frees up, in 1/256 cycles.
    port_free_fx: u64,
    warps: Vec<Option<Warp>>,
    blocks: Vec<Block>,
    scheds: Vec<Scheduler>,
}

struct Memory<'g> {
    gpu: &'g GpuConfig,
    l2: Cache,
    hbm: HbmQueue,
    l1c: LevelCounters,
    l2c: LevelCounters,
}

impl Memory<'_> {
    /// Completion time of a read of `addr` issued at `t` from an SM.
    fn read(&mut self, l1: &mut Cache, addr: u64, t: u64) -> u64 {
        let lat = &self.gpu.latencies;
        if let Some(ready) = l1.probe(addr) {
            self.l1c.hits += 1;
            return (t + lat.l1 as u64).max(ready);
        }
        self.l1c.misses += 1;
        let done = match self.l2.probe(addr) {
            Some(ready) => {
                self.l2c.hits += 1;
                (t + lat.l2 as u64).max(ready)
            }
            None => {
                self.l2c.misses += 1;
                let delay = self.hbm.request(t, LINE_BYTES);
                let done = t + lat.hbm as u64 + delay;
                self.l2.fill(addr, done, false);
                done
            }
        };
        l1.fill(addr, done, false);
        done
    }

    /// Write-allocate of a local line; it becomes visible at `t`.
    fn write_local(&mut self, l1: &mut Cache, addr: u64, t: u64) {
        l1.fill(addr, t, false);
        self.l2.fill(addr, t, false);
    }
}

fn station_latency(gpu: &GpuConfig, op: Op) -> u64 {
    match op {
        Op::ConsumeAdd(Station::Shared) => gpu.latencies.shared as u64,
        _ => 0,
    }
}

impl Warp {
    fn finished(&self) -> bool {
        self.pc >= self.prog.len()
    }

    /// Earliest issue time of the current instruction given that the warp
    /// is free from `t`.
    fn schedule(&mut self, gpu: &GpuConfig, t: u64) {
        self.want = t;
        if self.finished() {
            self.ready = NEVER;
            return;
        }
        let ins = self.prog[self.pc];
        self.dep_ready = ins
            .dep
            .map_or(0, |d| self.done[d as usize] + station_latency(gpu, ins.op));
        self.slot_ready = 0;
        if ins.op.uses_scoreboard() {
            self.outstanding.retain(|&c| c > t);
            let slots = gpu.scoreboard_slots_per_warp as usize;
            if self.outstanding.len() >= slots {
                self.outstanding.sort_unstable();
                self.slot_ready = self.outstanding[self.outstanding.len() - slots];
            }
        }
        self.ready = t.max(self.dep_ready).max(self.slot_ready);
    }
}

struct Engine<'a> {
    gpu: &'a GpuConfig,
    source: &'a dyn ProgramSource,
    opts: SimOptions,
    wpb: u32,
    blocks_per_sm: usize,
    sms: Vec<Sm>,
    mem: Memory<'a>,
    heap: BinaryHeap<Reverse<(u64, u8, u32, u32)>>,
    next_block: u32,
    total_blocks: u32,
    counters: RawCounters,
    end: u64,
}

/// Local memory is interleaved across warp slots: the same spill line of
/// neighbouring warps sits in neighbouring cache lines.
fn local_line(slots: u64, frame: u64, offset: u64) -> u64 {
    LOCAL_BASE + ((offset / LINE_BYTES) * slots + frame) * LINE_BYTES + offset % LINE_BYTES
}

impl<'a> Engine<'a> {
    fn launch_block(&mut self, sm: usize, slot: usize, block_id: u32, t: u64) -> Result<()> {
        let wpb = self.wpb as usize;
        let mut live = 0;
        for w in 0..wpb {
            let gw = block_id * self.wpb + w as u32;
            let program = self.source.program(gw);
            if self.opts.validate_programs {
                program.validate()?;
            }
            if program.instrs.is_empty() {
                continue;
            }
            let ws = slot * wpb + w;
            let frame = sm as u64 * self.gpu.max_warps_per_sm as u64 + ws as u64;
            let n = program.instrs.len();
            let mut warp = Warp {
                prog: program.instrs,
                done: vec![0; n],
                pc: 0,
                want: t,
                dep_ready: 0,
                slot_ready: 0,
                ready: t,
                outstanding: Vec::with_capacity(8),
                last_done: t,
                launched: t,
                block: slot,
                frame,
            };
            warp.schedule(self.gpu, t);
            let ready = warp.ready;
            let s = &mut self.sms[sm];
            s.warps[ws] = Some(warp);
            let si = ws % s.scheds.len();
            let sched = &mut s.scheds[si];
            sched.warps.push(ws as u32);
            let wake = ready.max(sched.busy_until);
            if wake < sched.wake {
                sched.wake = wake;
                self.heap
                    .push(Reverse((wake, EV_WAKE, sm as u32, si as u32)));
            }
            live += 1;
        }
        let b = &mut self.sms[sm].blocks[slot];
        b.live = live;
        b.finish = t;
        if live == 0 {
            self.heap
                .push(Reverse((t, EV_RETIRE, sm as u32, slot as u32)));
        }
        Ok(())
    }

    fn issue(&mut self, sm: usize, ws: usize, t: u64) -> u64 {
        let gpu = self.gpu;
        let s = &mut self.sms[sm];
        let warp = s.warps[ws].as_mut().expect("resident warp");
        let ins = warp.prog[warp.pc];

        let st = &mut self.counters.stall_cycles_by_reason;
        let a = warp.want;
        let b = warp.dep_ready.clamp(a, t);
        st.long_scoreboard += b - a;
        let c = warp.slot_ready.clamp(b, t);
        st.lsu_full += c - b;
        st.not_selected += t - c;

        let cost = ins.op.issue_cost() as u64;
        self.counters.issued_instructions += cost;
        if ins.op.is_load() {
            self.counters.executed_loads += 1;
        }
        // Requests queue for the SM's L1 data pipeline in issue order.
        let lines = ins.op.l1_lines();
        let t_mem = if lines > 0 {
            let start = s.port_free_fx.max(t << 8);
            s.port_free_fx = start + lines as u64 * gpu.l1_line_occupancy_fx();
            start.div_ceil(256)
        } else {
            t
        };
        let done = match ins.op {
            Op::Alu(_) | Op::ConsumeAdd(_) | Op::StoreOut => t_mem.max(t + cost),
            Op::LoadIndex | Op::LoadRow | Op::Prefetch(_) => {
                self.mem.read(&mut s.l1, ins.addr, t_mem)
            }
            Op::LoadLocal { lines } => {
                let slots = gpu.num_sms as u64 * gpu.max_warps_per_sm as u64;
                self.counters.local_memory_loads += 1;
                (0..lines as u64)
                    .map(|k| {
                        self.mem.read(
                            &mut s.l1,
                            local_line(slots, warp.frame, ins.addr + k * LINE_BYTES),
                            t_mem,
                        )
                    })
                    .max()
                    .unwrap_or(t_mem)
            }
            Op::StoreLocal { lines } => {
                let slots = gpu.num_sms as u64 * gpu.max_warps_per_sm as u64;
                for k in 0..lines as u64 {
                    self.mem.write_local(
                        &mut s.l1,
                        local_line(slots, warp.frame, ins.addr + k * LINE_BYTES),
                        t_mem,
                    );
                }
                t_mem + 1
            }
        };
        warp.done[warp.pc] = done;
        warp.last_done = warp.last_done.max(done);
        if ins.op.uses_scoreboard() {
            warp.outstanding.push(done);
        }
        warp.pc += 1;
        warp.schedule(gpu, t + cost);
        cost
    }

    fn retire_warp(&mut self, sm: usize, ws: usize, t_end: u64) {
        let warp = self.sms[sm].warps[ws].take().expect("resident warp");
        let finish = warp.last_done.max(t_end);
        self.counters.warp_active_cycles += finish - warp.launched;
        let block = &mut self.sms[sm].blocks[warp.block];
        block.finish = block.finish.max(finish);
        block.live -= 1;
        if block.live == 0 {
            let f = block.finish;
            self.heap
                .push(Reverse((f, EV_RETIRE, sm as u32, warp.block as u32)));
        }
    }

    fn step_scheduler(&mut self, sm: usize, si: usize, t: u64) {
        let pick = {
            let s = &self.sms[sm];
            let sched = &s.scheds[si];
            let ready = |w: u32| s.warps[w as usize].as_ref().is_some_and(|x| x.ready <= t);
            match sched.last {
                Some(l) if ready(l) => Some(l),
                _ => sched.warps.iter().copied().find(|&w| ready(w)),
            }
        };
        let mut next = t;
        if let Some(w) = pick {
            let cost = self.issue(sm, w as usize, t);
            next = t + cost;
            let sched = &mut self.sms[sm].scheds[si];
            sched.issued += cost;
            sched.busy_until = next;
            sched.last = Some(w);
            if self.sms[sm].warps[w as usize]
                .as_ref()
                .is_some_and(|x| x.finished())
            {
                let sched = &mut self.sms[sm].scheds[si];
                sched.warps.retain(|&x| x != w);
                sched.last = None;
                self.retire_warp(sm, w as usize, next);
            }
        }
        let s = &mut self.sms[sm];
        let min_ready = s.scheds[si]
            .warps
            .iter()
            .map(|&w| s.warps[w as usize].as_ref().map_or(NEVER, |x| x.ready))
            .min()
            .unwrap_or(NEVER);
        let sched = &mut s.scheds[si];
        sched.wake = if min_ready == NEVER {
            NEVER
        } else {
            min_ready.max(next)
        };
        if sched.wake != NEVER {
            self.heap
                .push(Reverse((sched.wake, EV_WAKE, sm as u32, si as u32)));
        }
    }

    fn run(&mut self) -> Result<()> {
        for _ in 0..self.blocks_per_sm {
            for sm in 0..self.sms.len() {
                if self.next_block >= self.total_blocks {
                    break;
                }
                let slot = self.sms[sm]
                    .blocks
                    .iter()
                    .position(|b| b.live == 0 && b.finish == NEVER)
                    .expect("free block slot");
                let id = self.next_block;
                self.next_block += 1;
                self.launch_block(sm, slot, id, 0)?;
            }
        }
        self.counters.active_sms = self
            .sms
            .iter()
            .filter(|s| s.blocks.iter().any(|b| b.finish != NEVER))
            .count() as u32;
        while let Some(Reverse((t, kind, sm, idx))) = self.heap.pop() {
            let (sm, idx) = (sm as usize, idx as usize);
            if kind == EV_RETIRE {
                self.end = self.end.max(t);
                self.sms[sm].blocks[idx].finish = NEVER;
                if self.next_block < self.total_blocks {
                    let id = self.next_block;
                    self.next_block += 1;
                    self.launch_block(sm, idx, id, t + self.gpu.block_launch_cycles as u64)?;
                }
            } else if self.sms[sm].scheds[idx].wake == t {
                self.step_scheduler(sm, idx, t);
            }
        }
        Ok(())
    }
}

/// Simulates one kernel launch. `l2` carries any residency primed before the
/// kernel (pinned lines); it is consumed by the run.
pub fn simulate_kernel(
    source: &dyn ProgramSource,
    gpu: &GpuConfig,
    occupancy: &OccupancyResult,
    l2: Cache,
    opts: &SimOptions,
) -> Result<RawCounters> {
    gpu.validate()?;
    let wpb = source.warps_per_block();
    if wpb == 0 || occupancy.blocks_per_sm == 0 {
        return Err(Error::LaunchFailure("empty launch".into()));
    }
    let blocks_per_sm = occupancy.blocks_per_sm as usize;
    let scheds = gpu.schedulers_per_sm as usize;
    let l1_bytes = occupancy
        .l1_data_bytes
        .max(gpu.l1.line_bytes * gpu.l1.assoc as u64);
    let sms = (0..gpu.num_sms)
        .map(|_| Sm {
            l1: Cache::new(l1_bytes, gpu.l1.line_bytes, gpu.l1.assoc),
            port_free_fx: 0,
            warps: (0..blocks_per_sm * wpb as usize).map(|_| None).collect(),
            blocks: (0..blocks_per_sm)
                .map(|_| Block {
                    live: 0,
                    finish: NEVER,
                })
                .collect(),
            scheds: (0..scheds)
                .map(|_| Scheduler {
                    warps: Vec::new(),
                    last: None,
                    busy_until: 0,
                    wake: NEVER,
                    issued: 0,
                })
                .collect(),
        })
        .collect();
    let hbm = if opts.infinite_bandwidth {
        HbmQueue::unlimited()
    } else {
        HbmQueue::new(
            gpu.hbm_peak_bytes_per_sec,
            gpu.sm_clock_hz,
            gpu.hbm_burst_bytes,
        )
    };
    let pinned_before = l2.stats.pinned_evictions;
    let mut e = Engine {
        gpu,
        source,
        opts: *opts,
        wpb,
        blocks_per_sm,
        sms,
        mem: Memory {
            gpu,
            l2,
            hbm,
            l1c: LevelCounters::default(),
            l2c: LevelCounters::default(),
        },
        heap: BinaryHeap::new(),
        next_block: 0,
        total_blocks: source.num_blocks(),
        counters: RawCounters {
            schedulers_per_sm: gpu.schedulers_per_sm,
            ..Default::default()
        },
        end: 0,
    };
    e.run()?;
    let mut c = e.counters;
    c.cycles = e.end;
    c.l1 = e.mem.l1c;
    c.l2 = e.mem.l2c;
    c.device_bytes_read = e.mem.hbm.bytes_read;
    c.pin_rejections = e.mem.l2.stats.pin_rejections;
    c.pinned_lines_evicted = e.mem.l2.stats.pinned_evictions - pinned_before;
    let issued: u64 = e
        .sms
        .iter()
        .flat_map(|s| s.scheds.iter())
        .map(|s| s.issued)
        .sum();
    debug_assert_eq!(issued, c.issued_instructions);
    c.stall_cycles_by_reason.no_eligible = (c.cycles * c.scheduler_count()).saturating_sub(issued);
    Ok(c)
}

/// Fresh L2 for a kernel run, with the device's set-aside budget.
pub fn new_l2(gpu: &GpuConfig, setaside_bytes: u64) -> Cache {
    Cache::new(gpu.l2.bytes, gpu.l2.line_bytes, gpu.l2.assoc)
        .with_pin_budget(setaside_bytes.min(gpu.l2.max_setaside_bytes()))
}
