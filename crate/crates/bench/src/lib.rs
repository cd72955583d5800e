//! Criterion benchmarks for `lagspaces-core`; see `benches/`.
