//! Criterion benchmarks live in `benches/`; this crate intentionally
//! exports nothing.
