//! Criterion benchmarks for `fairhash`; see `benches/`.
