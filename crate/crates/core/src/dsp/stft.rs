use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::SpectroConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One-sided complex spectrogram, `frames × bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Frame `t` is centred on sample `t · hop`; samples outside the signal are
/// zero. Yields `1 + len / hop` frames.
pub fn stft(samples: &[f64], cfg: &SpectroConfig) -> Result<Spectrogram> {
    if samples.len() < cfg.window_size {
        return Err(Error::SignalTooShort {
            len: samples.len(),
            window: cfg.window_size,
        });
    }
    let (n_fft, win, hop) = (cfg.fft_size, cfg.window_size, cfg.hop);
    let window = hann(win);
    let frames = 1 + samples.len() / hop;
    let bins = cfg.bins();
    let offset = (n_fft - win) / 2;
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        buf.fill(Complex64::new(0.0, 0.0));
        let start = (t * hop) as isize - (win / 2) as isize;
        for (n, w) in window.iter().enumerate() {
            let s = start + n as isize;
            if s >= 0 && (s as usize) < samples.len() {
                buf[offset + n] = Complex64::new(samples[s as usize] * w, 0.0);
            }
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram { frames, bins, data })
}

/// Least-squares inverse: windowed overlap-add divided by the summed squared
/// window, cropped to `len` samples.
pub fn istft(spec: &Spectrogram, len: usize, cfg: &SpectroConfig) -> Result<Vec<f64>> {
    let (n_fft, win, hop) = (cfg.fft_size, cfg.window_size, cfg.hop);
    if spec.bins != cfg.bins() {
        return Err(Error::shape("istft", format!("{} bins for fft {}", spec.bins, n_fft)));
    }
    let window = hann(win);
    let offset = (n_fft - win) / 2;
    let ifft = FftPlanner::new().plan_fft_inverse(n_fft);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..spec.frames {
        let frame = spec.frame(t);
        buf[..spec.bins].copy_from_slice(frame);
        for k in spec.bins..n_fft {
            buf[k] = frame[n_fft - k].conj();
        }
        ifft.process(&mut buf);
        let start = (t * hop) as isize - (win / 2) as isize;
        for (n, w) in window.iter().enumerate() {
            let s = start + n as isize;
            if s >= 0 && (s as usize) < len {
                let s = s as usize;
                out[s] += buf[offset + n].re / n_fft as f64 * w;
                norm[s] += w * w;
            }
        }
    }
    for (o, n) in out.iter_mut().zip(&norm) {
        if *n > 1e-10 {
            *o /= n;
        }
    }
    Ok(out)
}

pub fn magnitude(spec: &Spectrogram) -> Tensor {
    let data = spec.data.iter().map(|c| c.norm()).collect();
    Tensor::new([spec.frames, spec.bins], data).expect("frames × bins")
}
