//! Selective state-space layers.

pub mod block;
pub mod scan;
pub mod zoh;

pub use block::{BiSsm, SelectiveParams, SsmConfig, SsmDirection};
pub use scan::{
    discretize, parallel_scan_states, parallel_scan_tensor, readout, scan_states, selective_scan,
    selective_scan_tensor, selective_scan_with, Discretized, ScanKernel,
};
pub use zoh::{zoh_discretize, zoh_scalar, ZOH_SERIES_THRESHOLD};
