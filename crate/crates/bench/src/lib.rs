//! Criterion benchmarks for the numeric kernels, the encoder, beam search and
//! the metrics. Run with `cargo bench -p eegtext-bench`.
