//! Criterion benchmarks for the dynamics, potential fields, OCP solver and
//! motion predictor. Run them with `cargo bench -p udmc-bench`.
