//! Criterion benchmarks for the library live under benches/. The package
//! carries no code of its own.
