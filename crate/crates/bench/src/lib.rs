//! Criterion benchmarks for the `dagsel` kernels live in `benches/kernels.rs`.
