//! Command-line front end and benchmark harness for `hpcio`.

pub mod cli;
pub mod error;
pub mod report;
pub mod run;
pub mod trace;

pub use cli::cli_main;
pub use error::{BenchError, Result};
pub use report::{BenchMode, BenchReport, LatencyPreset, Repetition};
pub use run::{run_benchmark, BenchOptions, MetricsSource};
pub use trace::{generate_trace, AccessTrace, TraceFragment, TraceParams};
