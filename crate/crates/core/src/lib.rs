//! Sequential recommendation with stacked attention blocks that reuse a
//! fixed item-representation matrix, plus a causal self-attention
//! comparator, a leave-one-out data pipeline, ranking metrics, attention
//! diagnostics and block cost benchmarks.

pub mod bench;
pub mod config;
pub mod datapipe;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
