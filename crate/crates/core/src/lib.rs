//! Feedback-driven bargaining market toolkit.

// `!(x > 0.0)` rejects NaN along with nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bargaining_engine;
pub mod data_ingest;
pub mod econometrics;
pub mod intrinsic_value;
pub mod market_network;
pub mod rng;
mod stats;
pub mod tipping_analysis;
