use std::f64::consts::PI;

use convtts::dsp::{
    griffin_lim, griffin_lim_traced, magnitude, stft, MelFilterbank, SpectroConfig, ToyCorpus,
    ToySpec,
};
use convtts::tensor::{kernels, Tensor};

fn log_mag(x: &[f64], cfg: &SpectroConfig) -> Tensor {
    let m = magnitude(&stft(x, cfg).unwrap());
    let data = m.data().iter().map(|v| v.max(1e-12).ln()).collect();
    Tensor::new(m.shape().to_vec(), data).unwrap()
}

fn dominant_bin(x: &[f64], fft_size: usize) -> usize {
    let cfg = SpectroConfig {
        fft_size,
        window_size: fft_size,
        hop: fft_size / 4,
        ..SpectroConfig::desk()
    };
    let m = magnitude(&stft(x, &cfg).unwrap());
    let mut total = vec![0.0; m.cols()];
    for t in 0..m.rows() {
        for (a, b) in total.iter_mut().zip(m.row(t)) {
            *a += b;
        }
    }
    kernels::argmax(&total)
}

#[test]
fn griffin_lim_convergence_never_increases() {
    let mut cfg = SpectroConfig::desk();
    cfg.sharpening = 1.0;
    let corpus = ToyCorpus::generate(
        &ToySpec {
            utterances: 1,
            ..ToySpec::default()
        },
        8,
    )
    .unwrap();
    let target = log_mag(&corpus.utterances[0].wave.samples, &cfg);
    let (_, trace) = griffin_lim_traced(&target, &cfg, 60, 1).unwrap();
    assert_eq!(trace.len(), 60);
    for (i, w) in trace.windows(2).enumerate() {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "iteration {i}: {} → {}", w[0], w[1]);
    }
    assert!(trace[59] < trace[0]);
}

#[test]
fn griffin_lim_recovers_sinusoid_frequency() {
    let cfg = SpectroConfig::desk();
    let sr = cfg.sample_rate as f64;
    let x: Vec<f64> = (0..16_000)
        .map(|i| 0.5 * (2.0 * PI * 523.0 * i as f64 / sr).sin())
        .collect();
    let y = griffin_lim(&log_mag(&x, &cfg), &cfg, 60, 3).unwrap();
    let a = dominant_bin(&x, cfg.fft_size);
    let b = dominant_bin(&y.samples, cfg.fft_size);
    assert!(a.abs_diff(b) <= 1, "original bin {a}, reconstructed bin {b}");
}

#[test]
fn mel_of_toy_audio_is_finite() {
    let cfg = SpectroConfig::desk();
    let fb = MelFilterbank::new(&cfg).unwrap();
    let corpus = ToyCorpus::generate(
        &ToySpec {
            utterances: 2,
            ..ToySpec::default()
        },
        4,
    )
    .unwrap();
    for u in &corpus.utterances {
        let f = convtts::dsp::extract_features(&u.wave, &cfg, &fb).unwrap();
        assert!(f.mel.data().iter().all(|v| v.is_finite()));
        assert!(f.mel.data().iter().all(|v| *v >= 1e-5f64.ln()));
    }
}
