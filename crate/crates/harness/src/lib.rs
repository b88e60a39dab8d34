//! Workload generation, differential checking against a reference heap,
//! and I/O accounting experiments for the `empq` priority queue.

pub mod oracle;
pub mod runner;
pub mod sweep;
pub mod workload;
