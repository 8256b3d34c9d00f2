//! Criterion benchmarks of the initializer, one per-block solve and a small joint solve.
