//! benchforge: run a weighted suite of throughput benchmarks, collect their
//! metric streams and fold them into a single geometric-mean score.
//!
//! The pure parts (configuration, protocol, measurement loop, aggregation,
//! reporting, design analysis) build everywhere, including wasm. Process
//! supervision lives behind the `exec` feature.

pub mod aggregate;
pub mod config;
pub mod design;
pub mod protocol;
pub mod report;
pub mod rundir;
pub mod select;
pub mod template;
pub mod timer;
pub mod workload;

#[cfg(feature = "exec")]
pub mod exec;
