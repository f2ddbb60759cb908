//! Micro-programs with hand-stepped cycle counts.
//!
//! Unless a case says otherwise the GPU is one SM with one scheduler,
//! latencies l1 = 10, l2 = 100, hbm = 300, shared = 5, an L1 pipeline of one
//! line per cycle and unlimited device bandwidth.

use embsim::kernelmodel::{Instr, Op, ProgramList, Station, WarpProgram};
use embsim::simcore::{
    new_l2, simulate_kernel, Cache, CacheGeometry, GpuConfig, L2Geometry, Latencies, Limiter,
    OccupancyResult, RawCounters, SimOptions,
};

pub fn tiny() -> GpuConfig {
    GpuConfig {
        name: "tiny".into(),
        num_sms: 1,
        schedulers_per_sm: 1,
        max_warps_per_sm: 8,
        max_blocks_per_sm: 8,
        l1: CacheGeometry {
            bytes: 4096,
            line_bytes: 128,
            assoc: 1,
        },
        shared_bytes_per_sm: 0,
        shared_carveouts_kib: vec![0],
        l2: L2Geometry {
            bytes: 8192,
            line_bytes: 128,
            assoc: 4,
            max_setaside_fraction: 0.75,
        },
        latencies: Latencies {
            register: 1,
            shared: 5,
            l1: 10,
            l2: 100,
            hbm: 300,
        },
        scoreboard_slots_per_warp: 6,
        l1_bytes_per_cycle: 128,
        block_launch_cycles: 0,
        ..GpuConfig::a100()
    }
}

pub struct Case {
    pub gpu: GpuConfig,
    pub wpb: u32,
    pub blocks_per_sm: u32,
    pub l1_bytes: u64,
    pub infinite: bool,
    pub l2: Option<Cache>,
}

impl Case {
    pub fn new() -> Self {
        Case {
            gpu: tiny(),
            wpb: 1,
            blocks_per_sm: 1,
            l1_bytes: 4096,
            infinite: true,
            l2: None,
        }
    }

    pub fn run(self, progs: Vec<Vec<Instr>>) -> RawCounters {
        let list = ProgramList {
            warps_per_block: self.wpb,
            programs: progs
                .into_iter()
                .enumerate()
                .map(|(i, instrs)| WarpProgram {
                    warp_id: i as u32,
                    instrs,
                    clamped_distance: None,
                })
                .collect(),
        };
        let occ = OccupancyResult {
            blocks_per_sm: self.blocks_per_sm,
            warps_per_sm: self.blocks_per_sm * self.wpb,
            theoretical_occupancy_pct: 0.0,
            limiter: Limiter::WarpCap,
            regs_per_warp: 0,
            l1_data_bytes: self.l1_bytes,
        };
        let l2 = self.l2.unwrap_or_else(|| new_l2(&self.gpu, 0));
        let opts = SimOptions {
            infinite_bandwidth: self.infinite,
            validate_programs: true,
        };
        let c = simulate_kernel(&list, &self.gpu, &occ, l2, &opts).unwrap();
        c.check_invariants().unwrap();
        c
    }
}

pub fn i(op: Op, addr: u64, dep: Option<u32>) -> Instr {
    Instr { op, addr, dep }
}
pub fn ld(addr: u64) -> Instr {
    i(Op::LoadRow, addr, None)
}
pub fn add(dep: u32) -> Instr {
    i(Op::ConsumeAdd(Station::Register), 0, Some(dep))
}
pub fn alu(n: u32) -> Instr {
    i(Op::Alu(n), 0, None)
}

pub const A: u64 = 0;
pub const B: u64 = 256;
pub const C: u64 = 512;

fn one_byte_per_cycle(burst: u64) -> Case {
    let mut case = Case::new();
    case.gpu.hbm_peak_bytes_per_sec = 1e9;
    case.gpu.sm_clock_hz = 1e9;
    case.gpu.hbm_burst_bytes = burst;
    case.infinite = false;
    case
}

/// Each case becomes a plain function, an entry of `CASES` and, when built
/// as a test target, a `#[test]`.
macro_rules! micro {
    ($($name:ident $body:block)*) => {
        $(pub fn $name() $body)*

        pub const CASES: &[(&str, fn())] = &[$((stringify!($name), $name)),*];

        #[cfg(test)]
        mod each {
            $(#[test]
            fn $name() {
                super::$name()
            })*
        }
    };
}

micro! {
    m01_single_alu {
        assert_eq!(Case::new().run(vec![vec![alu(1)]]).cycles, 1);
    }

    m02_wide_alu {
        let c = Case::new().run(vec![vec![alu(5)]]);
        assert_eq!((c.cycles, c.issued_instructions), (5, 5));
    }

    m03_alu_sequence {
        assert_eq!(Case::new().run(vec![vec![alu(2), alu(3)]]).cycles, 5);
    }

    m04_cold_load {
        // Misses both levels: 0 + 300.
        let c = Case::new().run(vec![vec![ld(A)]]);
        assert_eq!(c.cycles, 300);
        assert_eq!((c.l1.misses, c.l2.misses, c.device_bytes_read), (1, 1, 128));
    }

    m05_second_load_merges_into_pending_line {
        // The second request at t=1 finds the line in flight and shares its fill.
        let c = Case::new().run(vec![vec![ld(A), ld(A)]]);
        assert_eq!(c.cycles, 300);
        assert_eq!((c.l1.hits, c.l1.misses, c.device_bytes_read), (1, 1, 128));
    }

    m06_dependent_add_waits_for_data {
        // Load at 0 returns at 300; the add issues at 300 and retires at 301.
        let c = Case::new().run(vec![vec![ld(A), add(0)]]);
        assert_eq!(c.cycles, 301);
        assert_eq!(c.stall_cycles_by_reason.long_scoreboard, 299);
        assert_eq!(c.stall_cycles_by_reason.no_eligible, 301 - 2);
    }

    m07_independent_work_hides_part_of_the_latency {
        // alu 1..5 overlaps the load; the add still waits for 300.
        let c = Case::new().run(vec![vec![ld(A), alu(4), add(0)]]);
        assert_eq!(c.cycles, 301);
        assert_eq!(c.stall_cycles_by_reason.long_scoreboard, 300 - 5);
    }

    m08_l1_hit_after_warmup {
        // Second load at 301 hits L1: 311; add at 311 retires at 312.
        let c = Case::new().run(vec![vec![ld(A), add(0), ld(A), add(2)]]);
        assert_eq!(c.cycles, 312);
        assert_eq!((c.l1.hits, c.l1.misses), (1, 1));
    }

    m09_l2_hit_after_l1_conflict {
        // Two direct-mapped L1 sets; A and B share set 0.
        // A: 0->300, add 301; B: 301->601, add 602; A again misses L1, hits L2: 602+100 = 702, add 703.
        let c = Case { l1_bytes: 256, ..Case::new() }.run(vec![vec![ld(A), add(0), ld(B), add(2), ld(A), add(4)]]);
        assert_eq!(c.cycles, 703);
        assert_eq!((c.l1.hits, c.l1.misses, c.l2.hits, c.l2.misses), (0, 3, 1, 2));
    }

    m10_scoreboard_full_stalls_third_load {
        // Two slots: A at 0 (300), B at 1 (301); C waits for A's slot, issues at 300, returns 600.
        let mut case = Case::new();
        case.gpu.scoreboard_slots_per_warp = 2;
        let c = case.run(vec![vec![ld(A), ld(B), ld(C)]]);
        assert_eq!(c.cycles, 600);
        assert_eq!(c.stall_cycles_by_reason.lsu_full, 300 - 2);
    }

    m11_shared_prefetch_adds_shared_latency {
        // Prefetch into shared returns at 300; consuming from shared adds 5: issue at 305, done 306.
        let c = Case::new().run(vec![vec![
            i(Op::Prefetch(Station::Shared), A, None),
            i(Op::ConsumeAdd(Station::Shared), 0, Some(0)),
        ]]);
        assert_eq!(c.cycles, 306);
        assert_eq!(c.executed_loads, 1);
    }

    m12_l1_prefetch_turns_load_into_hit {
        // Prefetch at 0 (ready 300), alu 1..401, load at 401 hits: 411, add 412.
        let c = Case::new().run(vec![vec![i(Op::Prefetch(Station::L1), A, None), alu(400), ld(A), add(2)]]);
        assert_eq!(c.cycles, 412);
        assert_eq!(c.executed_loads, 1);
    }

    m13_same_program_without_prefetch {
        // alu 0..400, load 400->700, add 701.
        let c = Case::new().run(vec![vec![alu(400), ld(A), add(1)]]);
        assert_eq!(c.cycles, 701);
    }

    m14_register_prefetch_consumed_late_does_not_stall {
        let c = Case::new().run(vec![vec![i(Op::Prefetch(Station::Register), A, None), alu(400), add(0)]]);
        assert_eq!(c.cycles, 402);
        assert_eq!(c.stall_cycles_by_reason.long_scoreboard, 0);
    }

    m15_spill_store_then_reload_hits_l1 {
        // Store at 0 occupies the L1 pipe until 1; reload at 1 hits: 11; dependent alu 11->12.
        let c = Case::new().run(vec![vec![
            i(Op::StoreLocal { lines: 1 }, 0, None),
            i(Op::LoadLocal { lines: 1 }, 0, None),
            i(Op::Alu(1), 0, Some(1)),
        ]]);
        assert_eq!(c.cycles, 12);
        assert_eq!((c.local_memory_loads, c.l1.hits, c.device_bytes_read), (1, 1, 0));
    }

    m16_cold_two_line_local_load {
        let c = Case::new().run(vec![vec![i(Op::LoadLocal { lines: 2 }, 0, None)]]);
        assert_eq!(c.cycles, 300);
        assert_eq!((c.local_memory_loads, c.executed_loads, c.l2.misses, c.device_bytes_read), (1, 1, 2, 256));
    }

    m17_l1_pipeline_contention {
        // 32 B/cycle: a line holds the pipe 4 cycles, so B starts at 4 and returns at 304.
        let mut case = Case::new();
        case.gpu.l1_bytes_per_cycle = 32;
        assert_eq!(case.run(vec![vec![ld(A), ld(B)]]).cycles, 304);
    }

    m18_bandwidth_queueing {
        // A occupies the channel for 128 cycles; B arrives at 1 and waits 127: 1 + 300 + 127.
        assert_eq!(one_byte_per_cycle(0).run(vec![vec![ld(A), ld(B)]]).cycles, 428);
    }

    m19_burst_absorbs_queueing {
        // A 128 B burst allowance hides the 127-cycle wait: 1 + 300.
        assert_eq!(one_byte_per_cycle(128).run(vec![vec![ld(A), ld(B)]]).cycles, 301);
    }

    m20_two_warps_share_one_scheduler {
        let c = Case { wpb: 2, ..Case::new() }.run(vec![vec![alu(3)], vec![alu(2)]]);
        assert_eq!(c.cycles, 5);
        assert_eq!(c.stall_cycles_by_reason.not_selected, 3);
    }

    m21_two_schedulers_run_in_parallel {
        let mut case = Case { wpb: 2, ..Case::new() };
        case.gpu.schedulers_per_sm = 2;
        let c = case.run(vec![vec![alu(3)], vec![alu(2)]]);
        assert_eq!(c.cycles, 3);
        assert_eq!(c.stall_cycles_by_reason.not_selected, 0);
    }

    m22_stalled_warp_yields_to_ready_warp {
        // w0 loads at 0; w1 runs alu 1..11; w0 adds at 300.
        let c = Case { wpb: 2, ..Case::new() }.run(vec![vec![ld(A), add(0)], vec![alu(10)]]);
        assert_eq!(c.cycles, 301);
        assert_eq!(c.stall_cycles_by_reason.not_selected, 1);
    }

    m23_greedy_keeps_the_last_warp {
        // w0 issues twice in a row before w1 gets the scheduler at 2.
        let c = Case { wpb: 2, ..Case::new() }.run(vec![vec![alu(1), alu(1)], vec![alu(1)]]);
        assert_eq!(c.cycles, 3);
        assert_eq!(c.stall_cycles_by_reason.not_selected, 2);
    }

    m24_blocks_backfill_one_slot {
        assert_eq!(Case::new().run(vec![vec![alu(4)], vec![alu(4)]]).cycles, 8);
    }

    m25_block_launch_gap {
        let mut case = Case::new();
        case.gpu.block_launch_cycles = 10;
        assert_eq!(case.run(vec![vec![alu(4)], vec![alu(4)]]).cycles, 18);
    }

    m26_two_sms_in_parallel {
        let mut case = Case::new();
        case.gpu.num_sms = 2;
        let c = case.run(vec![vec![alu(4)], vec![alu(4)]]);
        assert_eq!((c.cycles, c.active_sms), (4, 2));
    }

    m27_dependent_load_chain {
        // index 0->300, row 300->600, add 601.
        let c = Case::new().run(vec![vec![i(Op::LoadIndex, C, None), i(Op::LoadRow, A, Some(0)), add(1)]]);
        assert_eq!(c.cycles, 601);
        assert_eq!(c.executed_loads, 2);
    }

    m28_alu_consumer_of_load {
        assert_eq!(Case::new().run(vec![vec![ld(A), i(Op::Alu(2), 0, Some(0))]]).cycles, 302);
    }

    m29_empty_warp_is_skipped {
        let c = Case { wpb: 3, ..Case::new() }.run(vec![vec![alu(2)], vec![], vec![alu(2)]]);
        assert_eq!((c.cycles, c.issued_instructions), (4, 4));
    }

    m30_store_out {
        assert_eq!(Case::new().run(vec![vec![i(Op::StoreOut, A, None)]]).cycles, 1);
    }

    m31_shared_prefetches_take_no_scoreboard_slot {
        // One slot; the row load still issues at 2 behind two shared prefetches.
        let mut case = Case::new();
        case.gpu.scoreboard_slots_per_warp = 1;
        let c = case.run(vec![vec![
            i(Op::Prefetch(Station::Shared), A, None),
            i(Op::Prefetch(Station::Shared), B, None),
            ld(C),
        ]]);
        assert_eq!(c.cycles, 302);
    }

    m32_pinned_line_served_from_l2 {
        let gpu = tiny();
        let mut l2 = new_l2(&gpu, 1024);
        l2.fill(A, 0, true);
        let c = Case { l2: Some(l2), ..Case::new() }.run(vec![vec![ld(A)]]);
        assert_eq!(c.cycles, 100);
        assert_eq!((c.l2.hits, c.device_bytes_read), (1, 0));
    }

    m33_miss_merges_across_sms_in_l2 {
        // SM0 misses to HBM; SM1 finds the line pending in L2 and completes with it.
        let mut case = Case::new();
        case.gpu.num_sms = 2;
        let c = case.run(vec![vec![ld(A), add(0)], vec![ld(A), add(0)]]);
        assert_eq!(c.cycles, 301);
        assert_eq!((c.l2.hits, c.l2.misses, c.device_bytes_read), (1, 1, 128));
    }

    m34_a100_l1_resident_load_then_add {
        // Warm the line, then the add after an L1 hit issues 38 cycles after its load.
        let gpu = GpuConfig {
            num_sms: 1,
            schedulers_per_sm: 1,
            ..GpuConfig::a100()
        };
        let c = Case {
            gpu,
            l1_bytes: 192 << 10,
            ..Case::new()
        }
        .run(vec![vec![ld(A), add(0), ld(A), add(2)]]);
        // 0 -> 466, add 466..467, load at 467 -> 505, add 505..506.
        assert_eq!(c.cycles, 506);
        assert_eq!(c.stall_cycles_by_reason.long_scoreboard, (466 - 1) + (505 - 468));
    }
}
