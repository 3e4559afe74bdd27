//! Criterion benchmarks for the update paths live under `benches/`.
