//! Benchmarks for the scheduler and simulator; see `benches/`.
