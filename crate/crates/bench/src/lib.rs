//! Criterion benchmarks for the `pibic` kernels live under `benches/`.
