//! Decoy-state BB84: simulation, finite-statistics bounds and post-processing.

// `!(x > 0.0)` is used on purpose so NaN fails validation; the numerical
// kernels index several arrays in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod cascade;
pub mod channel;
pub mod lp;
pub mod optimizer;
pub mod pipeline;
pub mod presets;
pub mod registry;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod toeplitz;
