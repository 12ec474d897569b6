//! Criterion benchmarks for the harmonization kernels; see `benches/`.
