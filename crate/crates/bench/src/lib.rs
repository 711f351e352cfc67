//! Criterion benchmarks for the `chmm-core` kernels; see `benches/`.
