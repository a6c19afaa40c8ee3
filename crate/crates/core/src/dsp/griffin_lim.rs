use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::stft::{istft, stft, Spectrogram};
use super::{SpectroConfig, Waveform};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `exp(log_mag)^factor`, i.e. `exp(factor · log_mag)`.
pub fn sharpen(log_mag: &Tensor, factor: f64) -> Result<Tensor> {
    if log_mag.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log magnitudes"));
    }
    let data = log_mag.data().iter().map(|v| (v * factor).exp()).collect();
    Tensor::new(log_mag.shape().to_vec(), data)
}

/// `‖|S| − M‖ / ‖M‖` with both norms taken over the full two-sided
/// spectrum, so interior bins count twice.
pub fn spectral_convergence(spec: &Spectrogram, target: &Tensor, fft_size: usize) -> f64 {
    let bins = spec.bins;
    let weight = |k: usize| if k == 0 || (fft_size % 2 == 0 && k == bins - 1) { 1.0 } else { 2.0 };
    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..spec.frames {
        for (k, c) in spec.frame(t).iter().enumerate() {
            let m = target.at(t, k);
            num += weight(k) * (c.norm() - m).powi(2);
            den += weight(k) * m * m;
        }
    }
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Phase reconstruction from a linear-scale log-magnitude spectrogram.
/// Magnitudes are sharpened by `cfg.sharpening`; the initial phase is
/// uniform in `[−π, π)` from `seed`.
pub fn griffin_lim(
    log_mag: &Tensor,
    cfg: &SpectroConfig,
    iterations: usize,
    seed: u64,
) -> Result<Waveform> {
    griffin_lim_traced(log_mag, cfg, iterations, seed).map(|(w, _)| w)
}

/// Like [`griffin_lim`], also returning the spectral convergence after each
/// iteration.
pub fn griffin_lim_traced(
    log_mag: &Tensor,
    cfg: &SpectroConfig,
    iterations: usize,
    seed: u64,
) -> Result<(Waveform, Vec<f64>)> {
    if iterations == 0 {
        return Err(Error::Config("griffin-lim needs at least one iteration".into()));
    }
    if log_mag.shape().len() != 2 || log_mag.cols() != cfg.bins() {
        return Err(Error::shape("griffin_lim", format!("{:?}", log_mag.shape())));
    }
    let mag = sharpen(log_mag, cfg.sharpening)?;
    let (frames, bins) = (mag.rows(), mag.cols());
    let len = (frames - 1) * cfg.hop;
    if len < cfg.window_size {
        return Err(Error::SignalTooShort {
            len,
            window: cfg.window_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = Spectrogram {
        frames,
        bins,
        data: mag
            .data()
            .iter()
            .map(|&m| Complex64::from_polar(m, rng.random_range(-PI..PI)))
            .collect(),
    };
    let mut trace = Vec::with_capacity(iterations);
    let mut samples = Vec::new();
    for _ in 0..iterations {
        samples = istft(&spec, len, cfg)?;
        let rebuilt = stft(&samples, cfg)?;
        trace.push(spectral_convergence(&rebuilt, &mag, cfg.fft_size));
        for (s, (r, &m)) in spec.data.iter_mut().zip(rebuilt.data.iter().zip(mag.data())) {
            let n = r.norm();
            *s = if n > 0.0 { r * (m / n) } else { Complex64::new(m, 0.0) };
        }
    }
    samples = istft(&spec, len, cfg).unwrap_or(samples);
    Ok((Waveform::new(samples, cfg.sample_rate)?, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stft::magnitude;

    #[test]
    fn sharpening_raises_magnitudes() {
        let m = Tensor::new([1, 3], vec![0.5, 2.0, 1.0]).unwrap();
        let logm = Tensor::new([1, 3], m.data().iter().map(|v: &f64| v.ln()).collect()).unwrap();
        let s = sharpen(&logm, 1.4).unwrap();
        for (a, b) in s.data().iter().zip(m.data()) {
            assert!((a - b.powf(1.4)).abs() < 1e-12);
        }
        let bad = Tensor::new([1, 1], vec![f64::INFINITY]).unwrap();
        assert!(sharpen(&bad, 1.4).is_err());
    }

    #[test]
    fn rejects_zero_iterations() {
        let cfg = SpectroConfig::desk();
        let m = Tensor::zeros([20, cfg.bins()]);
        assert!(griffin_lim(&m, &cfg, 0, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let mut cfg = SpectroConfig::desk();
        cfg.sharpening = 1.0;
        let x: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.05).sin()).collect();
        let logm = magnitude(&stft(&x, &cfg).unwrap());
        let logm = Tensor::new(
            logm.shape().to_vec(),
            logm.data().iter().map(|v| v.max(1e-5).ln()).collect(),
        )
        .unwrap();
        let a = griffin_lim(&logm, &cfg, 3, 7).unwrap();
        let b = griffin_lim(&logm, &cfg, 3, 7).unwrap();
        assert_eq!(a, b);
    }
}
