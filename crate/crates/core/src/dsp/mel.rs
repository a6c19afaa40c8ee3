use super::SpectroConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * ((mel - MIN_LOG_MEL) * log_step()).exp()
    }
}

/// `ln(max(x, floor))`.
pub fn log_floor(x: f64, floor: f64) -> f64 {
    x.max(floor).ln()
}

/// Triangular filters equally spaced on the mel scale, each scaled by
/// `2 / (upper − lower)` Hz so they have equal area.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `[bins × bands]`.
    pub weights: Tensor,
    pub floor: f64,
}

impl MelFilterbank {
    pub fn new(cfg: &SpectroConfig) -> Result<Self> {
        cfg.validate()?;
        let bins = cfg.bins();
        let bands = cfg.mel_bands;
        let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
        let edges: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        let mut w = vec![0.0; bins * bands];
        for m in 0..bands {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (right - left);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let up = (f - left) / (centre - left);
                let down = (right - f) / (right - centre);
                let v = up.min(down).max(0.0);
                w[k * bands + m] = v * norm;
            }
        }
        if let Some(m) = (0..bands).find(|&m| (0..bins).all(|k| w[k * bands + m] == 0.0)) {
            return Err(Error::Config(format!("mel band {m} covers no FFT bin")));
        }
        Ok(MelFilterbank {
            weights: Tensor::new([bins, bands], w)?,
            floor: cfg.log_floor,
        })
    }

    pub fn bands(&self) -> usize {
        self.weights.cols()
    }

    /// Linear-magnitude projection `[T × F] → [T × bands]`.
    pub fn project(&self, mag: &Tensor) -> Result<Tensor> {
        let (bins, bands) = (self.weights.rows(), self.bands());
        if mag.shape().len() != 2 || mag.cols() != bins {
            return Err(Error::shape("mel", format!("{:?} for {bins} bins", mag.shape())));
        }
        let mut out = vec![0.0; mag.rows() * bands];
        for t in 0..mag.rows() {
            crate::tensor::kernels::accumulate_row(
                &mut out[t * bands..(t + 1) * bands],
                mag.row(t),
                self.weights.data(),
            );
        }
        Tensor::new([mag.rows(), bands], out)
    }

    /// Floored log of [`project`](Self::project).
    pub fn log_mel(&self, mag: &Tensor) -> Result<Tensor> {
        let mut t = self.project(mag)?;
        for v in t.data_mut() {
            *v = log_floor(*v, self.floor);
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scale_round_trips() {
        for hz in [0.0, 300.0, 999.0, 1000.0, 4321.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_input_fills_every_band() {
        let cfg = SpectroConfig::desk();
        let fb = MelFilterbank::new(&cfg).unwrap();
        let flat = Tensor::full([1, cfg.bins()], 1.0);
        assert!(fb.project(&flat).unwrap().data().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn single_bin_touches_at_most_two_bands() {
        let cfg = SpectroConfig::desk();
        let fb = MelFilterbank::new(&cfg).unwrap();
        for k in [3, 40, 200, 500] {
            let mut x = Tensor::zeros([1, cfg.bins()]);
            x.data_mut()[k] = 1.0;
            let nonzero = fb.project(&x).unwrap().data().iter().filter(|v| **v != 0.0).count();
            assert!((1..=2).contains(&nonzero), "bin {k}: {nonzero} bands");
        }
    }

    #[test]
    fn row_sums_match_triangle_geometry() {
        // Independent oracle: evaluate each triangle as a piecewise-linear
        // function of frequency and sum it over the bin centres.
        let cfg = SpectroConfig::desk();
        let fb = MelFilterbank::new(&cfg).unwrap();
        let bands = cfg.mel_bands;
        let mel_max = hz_to_mel(cfg.fmax);
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        for m in 0..bands {
            let point = |i: usize| mel_to_hz(mel_max * i as f64 / (bands + 1) as f64);
            let (a, b, c) = (point(m), point(m + 1), point(m + 2));
            let mut expected = 0.0;
            for k in 0..cfg.bins() {
                let f = k as f64 * bin_hz;
                let tri = if f <= a || f >= c {
                    0.0
                } else if f <= b {
                    (f - a) / (b - a)
                } else {
                    (c - f) / (c - b)
                };
                expected += tri * 2.0 / (c - a);
            }
            let got: f64 = (0..cfg.bins()).map(|k| fb.weights.at(k, m)).sum();
            assert!((got - expected).abs() < 1e-6, "band {m}: {got} vs {expected}");
        }
    }

    #[test]
    fn projection_is_linear() {
        let cfg = SpectroConfig::desk();
        let fb = MelFilterbank::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn([3, cfg.bins()], 1.0, &mut rng);
        let y = Tensor::randn([3, cfg.bins()], 1.0, &mut rng);
        let (a, b) = (0.7, -1.9);
        let combo: Vec<f64> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
        let lhs = fb.project(&Tensor::new([3, cfg.bins()], combo).unwrap()).unwrap();
        let (mx, my) = (fb.project(&x).unwrap(), fb.project(&y).unwrap());
        for ((l, p), q) in lhs.data().iter().zip(mx.data()).zip(my.data()) {
            assert!((l - (a * p + b * q)).abs() < 1e-10);
        }
    }

    #[test]
    fn log_applies_floor() {
        let cfg = SpectroConfig::desk();
        let fb = MelFilterbank::new(&cfg).unwrap();
        let out = fb.log_mel(&Tensor::zeros([2, cfg.bins()])).unwrap();
        assert!(out.data().iter().all(|v| *v == 1e-5f64.ln()));
    }
}
