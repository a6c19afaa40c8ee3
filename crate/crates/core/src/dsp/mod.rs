//! Spectrogram analysis and synthesis, audio I/O and the synthetic corpus.

mod griffin_lim;
mod mel;
mod stft;
mod toy;
mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use griffin_lim::{griffin_lim, griffin_lim_traced, sharpen, spectral_convergence};
pub use mel::{hz_to_mel, log_floor, mel_to_hz, MelFilterbank};
pub use stft::{istft, magnitude, stft, Spectrogram};
pub use toy::{
    dataset_ratio, extract_features, read_alignment, write_alignment, AlignmentSpan, Features,
    ToyCorpus, ToySpec, ToyUtterance, WorldTargets, SILENCE,
};
pub use wav::{read_wav, write_wav};

/// STFT and filterbank geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectroConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub window_size: usize,
    pub hop: usize,
    pub mel_bands: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub sharpening: f64,
    /// Floor applied before taking logs of magnitudes.
    pub log_floor: f64,
}

impl SpectroConfig {
    /// 16 kHz, FFT 1024, window 800, hop 200, 80 mel bands.
    pub fn desk() -> Self {
        SpectroConfig {
            sample_rate: 16_000,
            fft_size: 1024,
            window_size: 800,
            hop: 200,
            mel_bands: 80,
            fmin: 0.0,
            fmax: 8_000.0,
            sharpening: 1.4,
            log_floor: 1e-5,
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hop == 0 || self.hop > self.window_size || self.window_size > self.fft_size {
            return bad(format!(
                "need 0 < hop ≤ window ≤ fft, got {} / {} / {}",
                self.hop, self.window_size, self.fft_size
            ));
        }
        if self.mel_bands == 0 || self.mel_bands >= self.bins() {
            return bad(format!("mel bands {} for {} bins", self.mel_bands, self.bins()));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0)
        {
            return bad(format!("mel range {}..{} Hz", self.fmin, self.fmax));
        }
        if !(self.log_floor > 0.0) || !(self.sharpening > 0.0) {
            return bad("log floor and sharpening must be positive".into());
        }
        Ok(())
    }
}

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("waveform"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples"));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Scales down so every sample lies in `[−1, 1]`; quieter audio is left
    /// alone.
    pub fn peak_normalized(mut self) -> Self {
        let peak = self.peak();
        if peak > 1.0 {
            for s in &mut self.samples {
                *s /= peak;
            }
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_is_valid() {
        SpectroConfig::desk().validate().unwrap();
        assert_eq!(SpectroConfig::desk().bins(), 513);
        let mut bad = SpectroConfig::desk();
        bad.hop = 900;
        assert!(bad.validate().is_err());
        bad = SpectroConfig::desk();
        bad.mel_bands = 513;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn waveform_rejects_bad_samples() {
        assert!(Waveform::new(vec![], 16_000).is_err());
        assert!(Waveform::new(vec![0.0, f64::NAN], 16_000).is_err());
        let w = Waveform::new(vec![0.5, -2.0], 16_000).unwrap().peak_normalized();
        assert_eq!(w.samples, vec![0.25, -1.0]);
    }
}
