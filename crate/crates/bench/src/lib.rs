//! Benchmarks only; run `cargo bench -p webmine-bench`.
