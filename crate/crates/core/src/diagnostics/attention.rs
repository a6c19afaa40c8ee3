use std::fmt;

use serde::Serialize;

use crate::blocks::AttentionRecord;
use crate::dsp::AlignmentSpan;
use crate::error::{Error, Result};

/// Limits of the mechanical error proxies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ErrorThresholds {
    /// A backwards move larger than this counts as a regression.
    pub regression_tolerance: usize,
    /// More than this many steps without advancing counts as a stall.
    pub stall_steps: usize,
    /// A forward move larger than this counts as a jump.
    pub jump: usize,
}

impl Default for ErrorThresholds {
    fn default() -> Self {
        ErrorThresholds {
            regression_tolerance: 0,
            stall_steps: 10,
            jump: 4,
        }
    }
}

/// Proxy counts for repeats (regressions, stalls) and skips (jumps) along
/// an argmax path, plus alignment statistics when the truth is known.
/// Mispronunciations are not detectable this way; low coverage is the
/// closest signal.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ErrorReport {
    pub steps: usize,
    pub regressions: usize,
    pub stalls: usize,
    pub jumps: usize,
    /// Fraction of symbols that were the argmax at some step.
    pub coverage: Option<f64>,
    /// Mean |argmax − true symbol| over steps inside the alignment.
    pub mean_deviation: Option<f64>,
}

impl ErrorReport {
    /// Regressions plus jumps.
    pub fn errors(&self) -> usize {
        self.regressions + self.jumps
    }
}

impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "steps {} regressions(repeat proxy) {} stalls(repeat proxy) {} jumps(skip proxy) {}",
            self.steps, self.regressions, self.stalls, self.jumps
        )?;
        if let Some(c) = self.coverage {
            write!(f, " coverage {c:.3}")?;
        }
        if let Some(d) = self.mean_deviation {
            write!(f, " mean_deviation {d:.3}")?;
        }
        Ok(())
    }
}

/// `alignment` spans are in frames; decoder step `t` emits frames
/// `t·r .. (t+1)·r` and is compared with the symbol owning frame `t·r`.
pub fn attention_diagnostics(
    record: &AttentionRecord,
    alignment: Option<&[AlignmentSpan]>,
    reduction: usize,
    limits: &ErrorThresholds,
) -> Result<ErrorReport> {
    let path = &record.argmax_path;
    if path.is_empty() {
        return Err(Error::Empty("attention record"));
    }
    let mut report = ErrorReport {
        steps: path.len(),
        ..ErrorReport::default()
    };
    let mut still = 0;
    for w in path.windows(2) {
        let (prev, next) = (w[0], w[1]);
        if next + limits.regression_tolerance < prev {
            report.regressions += 1;
        }
        if next > prev + limits.jump {
            report.jumps += 1;
        }
        if next > prev {
            still = 0;
        } else {
            still += 1;
            // Each run is counted once, when it crosses the limit.
            if still == limits.stall_steps + 1 {
                report.stalls += 1;
            }
        }
    }
    if let Some(spans) = alignment {
        if spans.is_empty() {
            return Err(Error::Empty("alignment"));
        }
        let mut seen = vec![false; spans.len()];
        for &p in path {
            if let Some(s) = seen.get_mut(p) {
                *s = true;
            }
        }
        report.coverage = Some(seen.iter().filter(|&&s| s).count() as f64 / spans.len() as f64);
        let mut total = 0.0;
        let mut counted = 0usize;
        for (t, &p) in path.iter().enumerate() {
            let frame = t * reduction.max(1);
            if let Some(span) = spans.iter().find(|s| s.start <= frame && frame < s.end) {
                total += p.abs_diff(span.symbol) as f64;
                counted += 1;
            }
        }
        report.mean_deviation = (counted > 0).then(|| total / counted as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn record(path: &[usize], t_enc: usize) -> AttentionRecord {
        let mut w = Tensor::zeros([path.len(), t_enc]);
        for (t, &p) in path.iter().enumerate() {
            w.data_mut()[t * t_enc + p] = 1.0;
        }
        AttentionRecord::from_weights(w, false)
    }

    fn spans(n: usize, frames: usize) -> Vec<AlignmentSpan> {
        (0..n)
            .map(|i| AlignmentSpan {
                symbol: i,
                start: i * frames,
                end: (i + 1) * frames,
            })
            .collect()
    }

    #[test]
    fn diagonal_path_is_clean() {
        let path: Vec<usize> = (0..10).collect();
        let r = attention_diagnostics(&record(&path, 10), Some(&spans(10, 2)), 2, &ErrorThresholds::default())
            .unwrap();
        assert_eq!((r.regressions, r.jumps, r.stalls), (0, 0, 0));
        assert_eq!(r.coverage, Some(1.0));
        assert_eq!(r.mean_deviation, Some(0.0));
    }

    #[test]
    fn revisiting_counts_one_regression() {
        let path = [0, 1, 2, 3, 4, 5, 6, 7, 3, 4];
        let r = attention_diagnostics(&record(&path, 8), None, 1, &ErrorThresholds::default()).unwrap();
        assert_eq!(r.regressions, 1);
        assert_eq!(r.jumps, 0);
        assert_eq!(r.coverage, None);
    }

    #[test]
    fn jumps_and_stalls() {
        let mut path = vec![0, 5, 11];
        path.extend(std::iter::repeat_n(11, 12));
        path.push(12);
        path.extend(std::iter::repeat_n(12, 25));
        let r = attention_diagnostics(&record(&path, 13), None, 1, &ErrorThresholds::default()).unwrap();
        assert_eq!(r.jumps, 2);
        assert_eq!(r.stalls, 2);
        assert_eq!(r.regressions, 0);
    }

    #[test]
    fn coverage_counts_distinct_symbols() {
        let path = [0, 0, 2, 2];
        let r = attention_diagnostics(&record(&path, 4), Some(&spans(4, 1)), 1, &ErrorThresholds::default())
            .unwrap();
        assert_eq!(r.coverage, Some(0.5));
        // Truth is 0,1,2,3.
        assert_eq!(r.mean_deviation, Some(0.5));
    }

    #[test]
    fn empty_inputs_rejected() {
        let empty = AttentionRecord::from_weights(Tensor::zeros([0, 3]), false);
        assert!(attention_diagnostics(&empty, None, 1, &ErrorThresholds::default()).is_err());
        let one = record(&[0], 3);
        assert!(attention_diagnostics(&one, Some(&[]), 1, &ErrorThresholds::default()).is_err());
    }
}
