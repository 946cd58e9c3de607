//! Criterion benchmarks for the request pipeline; see `benches/pipeline.rs`.
