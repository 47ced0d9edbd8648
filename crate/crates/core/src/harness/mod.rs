//! Benchmark orchestration, synthetic stores, and report emission.

pub mod bench;
pub mod report;
pub mod synth;

pub use bench::{evaluate_model, run_benchmark, run_benchmark_stores, BenchConfig, BenchResult};
pub use report::emit_report;
pub use synth::{gen_synthetic_store, profile, SyntheticSpec};
