//! Criterion benchmarks for the amplitude tables, the reduced-state
//! assembly and the exact oracle. See `benches/`.
