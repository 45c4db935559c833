//! Noise injection, metrics and the experiment harness.

pub mod experiment;
pub mod linqs;
pub mod metrics;
pub mod noise;
