//! Benchmarks for the vidpose engine live in `benches/`.
