//! Benchmark harness for the branch store and its mount layer.
//!
//! Three scenarios: branch creation latency against base-tree size (should
//! be flat), commit/abort latency against modification size (commit grows,
//! abort stays cheap), and sequential throughput through the mount compared
//! with the native filesystem. Raw samples are always retained so every
//! reported median can be recomputed.

mod gen;
mod report;
mod scenarios;

pub use gen::{gen_tree, DEFAULT_FANOUT, DEFAULT_FILE_SIZE};
pub use report::{environment_fingerprint, median, Assertion, BenchReport, Point, Sample};
pub use scenarios::{
    bench_commit_abort, bench_creation, bench_throughput, COMMIT_MOD_SIZES, CREATION_BASE_SIZES,
    THROUGHPUT_BLOCK_BYTES, THROUGHPUT_FILE_BYTES,
};
