//! Criterion benchmarks for `lipauth-core`; see `benches/pipeline.rs`.
