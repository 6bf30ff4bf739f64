//! Workload generation, benchmark suites and reports for `sidmask`.

pub mod report;
pub mod spec;
pub mod suites;

pub use report::{BenchReport, Summary};
pub use spec::{Method, SweepSpec, WorkloadMode};
