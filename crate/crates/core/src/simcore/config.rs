use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub bytes: u64,
    pub line_bytes: u64,
    pub assoc: u32,
}

impl CacheGeometry {
    pub fn lines(&self) -> u64 {
        self.bytes / self.line_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Geometry {
    pub bytes: u64,
    pub line_bytes: u64,
    pub assoc: u32,
    pub max_setaside_fraction: f64,
}

impl L2Geometry {
    pub fn lines(&self) -> u64 {
        self.bytes / self.line_bytes
    }

    pub fn max_setaside_bytes(&self) -> u64 {
        (self.bytes as f64 * self.max_setaside_fraction).floor() as u64
    }
}

/// Access latencies in SM cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latencies {
    pub register: u32,
    pub shared: u32,
    pub l1: u32,
    pub l2: u32,
    pub hbm: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuConfig {
    pub name: String,
    pub num_sms: u32,
    pub schedulers_per_sm: u32,
    pub max_warps_per_sm: u32,
    pub max_blocks_per_sm: u32,
    pub regfile_regs_per_sm: u32,
    /// Per-warp register allocation is rounded up to this many registers.
    pub reg_alloc_granularity: u32,
    /// Unified L1 data cache and shared memory capacity per SM.
    pub l1: CacheGeometry,
    pub shared_bytes_per_sm: u64,
    /// Selectable shared-memory carveouts in KiB; the rest of the unified
    /// capacity serves as L1.
    pub shared_carveouts_kib: Vec<u32>,
    pub l2: L2Geometry,
    pub latencies: Latencies,
    pub hbm_peak_bytes_per_sec: f64,
    /// Bytes the memory system may absorb back to back before queueing.
    pub hbm_burst_bytes: u64,
    pub sm_clock_hz: f64,
    pub scoreboard_slots_per_warp: u32,
    /// Data bandwidth of one SM's L1/shared-memory pipeline.
    pub l1_bytes_per_cycle: u32,
    /// Delay between a block retiring and its replacement starting.
    pub block_launch_cycles: u32,
}

impl GpuConfig {
    pub fn a100() -> Self {
        GpuConfig {
            name: "a100".into(),
            num_sms: 108,
            schedulers_per_sm: 4,
            max_warps_per_sm: 64,
            max_blocks_per_sm: 32,
            regfile_regs_per_sm: 65_536,
            reg_alloc_granularity: 256,
            l1: CacheGeometry {
                bytes: 192 << 10,
                line_bytes: 128,
                assoc: 32,
            },
            shared_bytes_per_sm: 164 << 10,
            shared_carveouts_kib: vec![0, 8, 16, 32, 64, 100, 132, 164],
            l2: L2Geometry {
                bytes: 40 << 20,
                line_bytes: 128,
                assoc: 16,
                max_setaside_fraction: 0.75,
            },
            latencies: Latencies {
                register: 1,
                shared: 29,
                l1: 38,
                l2: 262,
                hbm: 466,
            },
            hbm_peak_bytes_per_sec: 1.94e12,
            hbm_burst_bytes: 16 << 10,
            sm_clock_hz: 1.41e9,
            scoreboard_slots_per_warp: 6,
            l1_bytes_per_cycle: 96,
            block_launch_cycles: 0,
        }
    }

    pub fn h100() -> Self {
        GpuConfig {
            name: "h100".into(),
            num_sms: 132,
            l1: CacheGeometry {
                bytes: 256 << 10,
                line_bytes: 128,
                assoc: 32,
            },
            shared_bytes_per_sm: 228 << 10,
            shared_carveouts_kib: vec![0, 8, 16, 32, 64, 100, 132, 164, 196, 228],
            l2: L2Geometry {
                bytes: 50 << 20,
                line_bytes: 128,
                assoc: 16,
                max_setaside_fraction: 0.75,
            },
            hbm_peak_bytes_per_sec: 3.84e12,
            sm_clock_hz: 1.41e9 * 1.27,
            ..GpuConfig::a100()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "a100" => Ok(Self::a100()),
            "h100" => Ok(Self::h100()),
            _ => Err(Error::Config(format!("unknown gpu preset '{name}'"))),
        }
    }

    /// Time one line occupies the L1 data pipeline, in 1/256 cycles.
    pub fn l1_line_occupancy_fx(&self) -> u64 {
        (self.l1.line_bytes << 8).div_ceil(self.l1_bytes_per_cycle as u64)
    }

    pub fn hbm_bytes_per_cycle(&self) -> f64 {
        self.hbm_peak_bytes_per_sec / self.sm_clock_hz
    }

    /// L1 data capacity left after reserving `shared_per_sm` bytes of shared memory.
    pub fn l1_data_bytes(&self, shared_per_sm: u64) -> Option<u64> {
        let carveout = self
            .shared_carveouts_kib
            .iter()
            .map(|&k| k as u64 * 1024)
            .filter(|&c| c >= shared_per_sm)
            .min()?;
        Some(self.l1.bytes.saturating_sub(carveout))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("gpu '{}': {m}", self.name)));
        if self.num_sms == 0
            || self.schedulers_per_sm == 0
            || self.max_warps_per_sm == 0
            || self.max_blocks_per_sm == 0
        {
            return bad("SM, scheduler, warp and block counts must be positive".into());
        }
        if self.l1.line_bytes != 128 || self.l2.line_bytes != 128 {
            return bad("line size must be 128 bytes at both cache levels".into());
        }
        if self.reg_alloc_granularity == 0 || self.regfile_regs_per_sm == 0 {
            return bad("register file and granularity must be positive".into());
        }
        for (what, lines, assoc) in [
            ("l1", self.l1.lines(), self.l1.assoc as u64),
            ("l2", self.l2.lines(), self.l2.assoc as u64),
        ] {
            if assoc == 0 || lines == 0 || lines % assoc != 0 {
                return bad(format!(
                    "{what} of {lines} lines is not divisible into {assoc}-way sets"
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.l2.max_setaside_fraction) {
            return bad("max_setaside_fraction must lie in [0, 1]".into());
        }
        if !(self.hbm_peak_bytes_per_sec > 0.0 && self.sm_clock_hz > 0.0) {
            return bad("bandwidth and clock must be positive".into());
        }
        if self.scoreboard_slots_per_warp == 0 {
            return bad("scoreboard_slots_per_warp must be positive".into());
        }
        if self.l1_bytes_per_cycle == 0 {
            return bad("l1_bytes_per_cycle must be positive".into());
        }
        if self
            .shared_carveouts_kib
            .iter()
            .any(|&k| k as u64 * 1024 > self.l1.bytes)
        {
            return bad("a shared-memory carveout exceeds the unified L1 capacity".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        let a = GpuConfig::a100();
        a.validate().unwrap();
        GpuConfig::h100().validate().unwrap();
        assert_eq!(a.l2.max_setaside_bytes(), 30 << 20);
        assert_eq!(a.l1.lines(), 1536);
        assert!((a.hbm_bytes_per_cycle() - 1375.9).abs() < 0.1);
    }

    #[test]
    fn carveout_steps() {
        let a = GpuConfig::a100();
        assert_eq!(a.l1_data_bytes(0), Some(192 << 10));
        assert_eq!(a.l1_data_bytes(1), Some(184 << 10));
        assert_eq!(a.l1_data_bytes(40 << 10), Some(128 << 10));
        assert_eq!(a.l1_data_bytes(165 << 10), None);
    }
}
