use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use num_traits::Float;

use super::engine::InferenceModel;
use super::synth::{synthesize, SynthesisOptions};
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::textfront::SymbolSequence;

/// One point of the stream sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub streams: usize,
    pub queries: usize,
    pub audio_seconds: f64,
    pub wall_seconds: f64,
    /// Completed queries per wall second.
    pub raw_qps: f64,
    /// Seconds of audio per wall second: queries normalized to one second
    /// of audio each.
    pub qps: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub row: BenchRow,
    /// The first waveform produced for each utterance, when any.
    pub audio: Vec<Option<Waveform>>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// `1, 2, 4, …` up to and including `max`.
pub fn stream_sweep(max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut n = 1;
    while n < max {
        out.push(n);
        n *= 2;
    }
    out.push(max.max(1));
    out
}

struct StreamLog {
    latencies: Vec<f64>,
    audio_seconds: f64,
    first: Vec<(usize, Waveform)>,
}

fn query_seconds(model: &Model, wave: Option<&Waveform>, frames: usize) -> f64 {
    match wave {
        Some(w) => w.seconds(),
        None => (frames * model.config.window_shift[1]) as f64 / f64::from(model.config.sample_rate),
    }
}

/// Runs `streams` independent decoders on their own threads for at least
/// `duration` (each completes one query at minimum). Streams share only
/// the read-only model; utterance `i` of stream `s` is
/// `utterances[(s + i · streams) mod n]`.
pub fn throughput_bench<T: Float + Send + Sync>(
    model: &Model,
    engine: &InferenceModel<T>,
    utterances: &[SymbolSequence],
    opts: &SynthesisOptions,
    streams: usize,
    duration: Duration,
) -> Result<BenchRun> {
    if utterances.is_empty() {
        return Err(Error::Empty("bench utterances"));
    }
    let streams = streams.max(1);
    let start = Instant::now();
    let logs: Vec<Result<StreamLog>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..streams)
            .map(|s| {
                scope.spawn(move || -> Result<StreamLog> {
                    let mut log = StreamLog {
                        latencies: Vec::new(),
                        audio_seconds: 0.0,
                        first: Vec::new(),
                    };
                    let mut i = 0;
                    loop {
                        let u = (s + i * streams) % utterances.len();
                        let q0 = Instant::now();
                        let out = synthesize(model, engine, &utterances[u], opts)?;
                        log.latencies.push(q0.elapsed().as_secs_f64() * 1e3);
                        log.audio_seconds += query_seconds(model, out.wave.as_ref(), out.mel.rows());
                        if let Some(w) = out.wave {
                            if !log.first.iter().any(|(k, _)| *k == u) {
                                log.first.push((u, w));
                            }
                        }
                        i += 1;
                        if start.elapsed() >= duration {
                            break;
                        }
                    }
                    Ok(log)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench stream panicked"))
            .collect()
    });
    let wall = start.elapsed().as_secs_f64();

    let mut latencies = Vec::new();
    let mut audio_seconds = 0.0;
    let mut audio: Vec<Option<Waveform>> = vec![None; utterances.len()];
    for log in logs {
        let log = log?;
        latencies.extend(log.latencies);
        audio_seconds += log.audio_seconds;
        for (u, w) in log.first {
            audio[u].get_or_insert(w);
        }
    }
    latencies.sort_by(f64::total_cmp);
    let queries = latencies.len();
    Ok(BenchRun {
        row: BenchRow {
            streams,
            queries,
            audio_seconds,
            wall_seconds: wall,
            raw_qps: queries as f64 / wall,
            qps: audio_seconds / wall,
            p50_ms: percentile(&latencies, 50.0),
            p95_ms: percentile(&latencies, 95.0),
            p99_ms: percentile(&latencies, 99.0),
        },
        audio,
    })
}

/// One bench per entry of [`stream_sweep`].
pub fn bench_sweep<T: Float + Send + Sync>(
    model: &Model,
    engine: &InferenceModel<T>,
    utterances: &[SymbolSequence],
    opts: &SynthesisOptions,
    max_streams: usize,
    duration: Duration,
) -> Result<Vec<BenchRow>> {
    stream_sweep(max_streams)
        .into_iter()
        .map(|n| throughput_bench(model, engine, utterances, opts, n, duration).map(|r| r.row))
        .collect()
}

/// `qps(n) / (n · qps(1))` for every row, against the single-stream row.
pub fn scaling_efficiency(rows: &[BenchRow]) -> Vec<(usize, f64)> {
    let base = rows.iter().find(|r| r.streams == 1).map_or(0.0, |r| r.qps);
    rows.iter()
        .map(|r| (r.streams, r.qps / (r.streams as f64 * base)))
        .collect()
}

pub const BENCH_HEADER: &str =
    "streams,queries,audio_seconds,wall_seconds,raw_qps,qps,p50_ms,p95_ms,p99_ms";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{BENCH_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.3},{:.3},{:.3}",
            r.streams, r.queries, r.audio_seconds, r.wall_seconds, r.raw_qps, r.qps, r.p50_ms, r.p95_ms, r.p99_ms
        );
    }
    s
}

pub fn write_bench_csv(path: impl AsRef<Path>, rows: &[BenchRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bench_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_and_percentiles() {
        assert_eq!(stream_sweep(1), vec![1]);
        assert_eq!(stream_sweep(4), vec![1, 2, 4]);
        assert_eq!(stream_sweep(6), vec![1, 2, 4, 6]);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[7.0], 99.0), 7.0);
    }
}
