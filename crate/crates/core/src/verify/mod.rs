//! Finite-difference oracles and gradient-check reports.

mod fd;
mod gradcheck;
mod network;

pub use fd::{
    discrepancy, finite_diff, finite_diff_sym, pair_sum, relative_error, Discrepancy, DEFAULT_STEP,
};
pub use gradcheck::{
    conditioned_spd, gradcheck_layer, validate_oracle, GradCheckReport, LayerCheck, LayerKind,
    OracleCheck, TensorCheck, ABS_FALLBACK, SMALL_GRADIENT,
};
pub use network::{gradcheck_network, tiny_config, tiny_config_d3, NetworkCheck};
