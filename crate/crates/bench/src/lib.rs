//! Benchmark-only crate; see `benches/scheme.rs`.
