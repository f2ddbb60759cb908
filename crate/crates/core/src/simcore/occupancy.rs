use serde::{Deserialize, Serialize};

use super::config::GpuConfig;
use crate::error::{invalid, Error, Result};
use crate::kernelmodel::{KernelLaunchConfig, SpillPlan, WARP_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limiter {
    Registers,
    SharedMemory,
    WarpCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyResult {
    pub blocks_per_sm: u32,
    pub warps_per_sm: u32,
    pub theoretical_occupancy_pct: f64,
    pub limiter: Limiter,
    pub regs_per_warp: u32,
    /// L1 data capacity per SM after the shared-memory carveout.
    pub l1_data_bytes: u64,
}

pub fn occupancy(
    regs_per_thread: u32,
    launch: &KernelLaunchConfig,
    gpu: &GpuConfig,
) -> Result<OccupancyResult> {
    if regs_per_thread == 0 {
        return Err(invalid("regs_per_thread must be >= 1"));
    }
    let wpb = launch.warps_per_block()?;
    let g = gpu.reg_alloc_granularity;
    let regs_per_warp = (regs_per_thread * WARP_SIZE).div_ceil(g) * g;
    let by_regs = gpu.regfile_regs_per_sm / (regs_per_warp * wpb);
    let by_warps = (gpu.max_warps_per_sm / wpb).min(gpu.max_blocks_per_sm);
    let smem = launch.shared_bytes_per_block as u64;
    let by_smem = if smem == 0 {
        u32::MAX
    } else {
        (gpu.shared_bytes_per_sm / smem).min(u32::MAX as u64) as u32
    };
    let blocks = by_regs.min(by_warps).min(by_smem);
    if blocks == 0 {
        return Err(Error::LaunchFailure(format!(
            "no block fits: {regs_per_thread} regs/thread, {smem} B shared/block, {wpb} warps/block"
        )));
    }
    let limiter = if blocks == by_warps {
        Limiter::WarpCap
    } else if blocks == by_regs {
        Limiter::Registers
    } else {
        Limiter::SharedMemory
    };
    let warps = blocks * wpb;
    let l1_data_bytes = gpu
        .l1_data_bytes(blocks as u64 * smem)
        .ok_or_else(|| Error::LaunchFailure("shared memory exceeds every carveout".into()))?;
    Ok(OccupancyResult {
        blocks_per_sm: blocks,
        warps_per_sm: warps,
        theoretical_occupancy_pct: warps as f64 * 100.0 / gpu.max_warps_per_sm as f64,
        limiter,
        regs_per_warp,
        l1_data_bytes,
    })
}

/// How register spilling turns into local-memory traffic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpillModel {
    /// Registers the kernel needs without a cap.
    pub regs_needed: u32,
    /// Fraction of spilled registers reloaded per loop iteration.
    pub reuse_coeff: f64,
    /// Consecutive spilled registers fetched by one vectorized reload.
    pub lines_per_load: u32,
    /// Share of the spilled registers that stay live across the loop.
    pub loop_live_fraction: f64,
    pub enabled: bool,
}

impl Default for SpillModel {
    fn default() -> Self {
        SpillModel {
            regs_needed: 74,
            reuse_coeff: 1.0 / 32.0,
            lines_per_load: 4,
            loop_live_fraction: 0.4375,
            enabled: true,
        }
    }
}

impl SpillModel {
    pub fn plan(&self, regs_needed: u32, regs_allocated: u32) -> SpillPlan {
        let spilled = regs_needed.saturating_sub(regs_allocated);
        if !self.enabled || spilled == 0 {
            return SpillPlan::default();
        }
        SpillPlan {
            spilled_regs: spilled,
            loads_per_iter: (spilled as f64 * self.reuse_coeff - 1e-9).ceil().max(1.0) as u32,
            lines_per_load: self.lines_per_load.max(1),
            loop_lines: ((spilled as f64 * self.loop_live_fraction).ceil() as u32)
                .clamp(1, spilled),
        }
    }
}

/// Local load and store instructions per thread for one kernel invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpillTraffic {
    pub spilled_regs: u32,
    pub local_loads: u64,
    pub local_stores: u64,
}

pub fn spill_model(
    regs_needed: u32,
    regs_allocated: u32,
    pooling: u32,
    model: &SpillModel,
) -> SpillTraffic {
    let plan = model.plan(regs_needed, regs_allocated);
    SpillTraffic {
        spilled_regs: plan.spilled_regs,
        local_loads: plan.loads_per_iter as u64 * pooling as u64,
        local_stores: if plan.is_empty() {
            0
        } else {
            plan.spilled_regs.div_ceil(plan.lines_per_load) as u64
        },
    }
}
