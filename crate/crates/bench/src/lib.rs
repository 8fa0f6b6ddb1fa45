//! Benchmark host crate.
