//! Diagonal state-space models: discretization, the reference evaluation
//! routes, the associative scan, and the learnable selective variant.

pub mod blelloch;
pub mod kernel;
pub mod selective;

pub use blelloch::{blelloch_inclusive, Affine};
pub use kernel::{
    conv_form, conv_kernel, discretize, discretize_zoh, input_factor, parallel_scan, recurrence, DiagonalSsm, DiscreteSsm, Discretization,
    SelectiveLane, ZOH_SERIES_THRESHOLD,
};
pub use selective::{default_dt_rank, selective_scan, SsmConfig, SsmParams};
