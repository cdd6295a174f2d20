//! Criterion benchmarks for the hyperwave kernels; see `benches/kernels.rs`.
