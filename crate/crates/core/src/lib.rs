//! Warp-level timing simulator for embedding-bag lookup kernels on
//! A100/H100-class GPUs, together with the optimizations that can be layered
//! on top of the baseline kernel (register capping, software prefetching,
//! L2 pinning) and an experiment harness around them.

pub mod error;
pub mod harness;
pub mod kernelmodel;
pub mod metrics;
pub mod optim;
pub mod simcore;
pub mod workload;

pub use error::{Error, Result};
