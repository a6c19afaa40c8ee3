//! Autoregressive synthesis: a fused incremental decoder over preloaded
//! weights, the monotonic attention window, a full-recompute oracle and a
//! multi-stream throughput harness.

mod bench;
mod engine;
mod reference;
mod synth;

pub use bench::{
    bench_csv, bench_sweep, percentile, scaling_efficiency, stream_sweep, throughput_bench,
    write_bench_csv, BenchRow, BenchRun, BENCH_HEADER,
};
pub use engine::{
    fused_decode_step, fused_step_with_input, recompute_in_precision, DecodingStream, HistoryStep,
    InferenceModel, UtteranceContext,
};
pub use reference::{recompute_step, reference_decode, ReferenceStep};
pub use synth::{default_max_steps, finish, synthesize, Synthesis, SynthesisOptions};
