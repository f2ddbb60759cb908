//! Timing model of one kernel launch: occupancy, caches with residency
//! control, bandwidth-limited device memory, and warp scheduling.

pub mod cache;
pub mod config;
pub mod engine;
pub mod hbm;
pub mod occupancy;

pub use cache::{Cache, CacheStats, FillOutcome};
pub use config::{CacheGeometry, GpuConfig, L2Geometry, Latencies};
pub use engine::{new_l2, simulate_kernel, LevelCounters, RawCounters, SimOptions, StallBreakdown};
pub use hbm::HbmQueue;
pub use occupancy::{occupancy, spill_model, Limiter, OccupancyResult, SpillModel, SpillTraffic};
