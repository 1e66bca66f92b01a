//! Benchmark harness and correctness scenarios for `txds`.
//!
//! [`micro`] runs the map-then-queue microbenchmark, [`nids`] the
//! intrusion-detection pipeline, and [`scenarios`] the targeted correctness
//! experiments used by the acceptance suite.

use std::path::PathBuf;

use thiserror::Error;

pub mod micro;
pub mod nids;
pub mod scenarios;
mod stats;

pub use micro::{run_micro, MicroConfig, MicroPolicy, MicroRun};
pub use nids::{run_nids, NidsConfig, NidsPolicy, NidsRun};
pub use stats::{emit_csv, write_csv, RunStats, CSV_HEADER};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("audit failed: {0}")]
    Audit(String),
}
