use convtts::blocks::{AttentionRecord, Window};
use convtts::diagnostics::{attention_diagnostics, speaker_pca, ErrorThresholds};
use convtts::dsp::{hz_to_mel, istft, mel_to_hz, stft, SpectroConfig};
use convtts::tensor::{kernels, Tape, Tensor};
use convtts::textfront::{encode_characters, normalize_text, SymbolTable};
use proptest::prelude::*;

fn softmax_rows(logits: &[f64], cols: usize, scale: f64) -> Tensor {
    let rows = logits.len() / cols;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let scaled: Vec<f64> = logits[r * cols..(r + 1) * cols].iter().map(|l| l * scale).collect();
        kernels::softmax_window(&scaled, &mut out[r * cols..(r + 1) * cols], 0, cols);
    }
    Tensor::new([rows, cols], out).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn windowed_softmax_is_a_distribution(
        logits in prop::collection::vec(-30.0f64..30.0, 1..40),
        a in 0usize..40,
        b in 0usize..40,
    ) {
        let n = logits.len();
        let (lo, hi) = (a.min(b) % n, (a.max(b) % n) + 1);
        prop_assume!(lo < hi);
        let mut out = vec![0.0; n];
        kernels::softmax_window(&logits, &mut out, lo, hi);
        let sum: f64 = out.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for (j, &w) in out.iter().enumerate() {
            prop_assert!(w >= 0.0);
            if j < lo || j >= hi {
                prop_assert_eq!(w, 0.0);
            }
        }
        let best = kernels::argmax(&out);
        prop_assert!(best >= lo && best < hi);
    }

    #[test]
    fn window_bounds_stay_inside(last in 0usize..50, width in 1usize..8, t_enc in 1usize..40) {
        let ((lo, hi), clamped) = Window { last, width }.bounds(t_enc);
        prop_assert!(lo < hi && hi <= t_enc);
        prop_assert!(hi - lo <= width);
        prop_assert_eq!(clamped, last >= t_enc);
    }

    #[test]
    fn tape_linear_matches_brute_force(
        rows in 1usize..5,
        d_in in 1usize..5,
        d_out in 1usize..5,
        seed in any::<u64>(),
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn([rows, d_in], 1.0, &mut rng);
        let w = Tensor::randn([d_in, d_out], 1.0, &mut rng);
        let b = Tensor::randn([d_out], 1.0, &mut rng);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
        let y = tape.linear(xv, wv, bv).unwrap();
        for i in 0..rows {
            for o in 0..d_out {
                let expect: f64 = b.data()[o] + (0..d_in).map(|k| x.at(i, k) * w.at(k, o)).sum::<f64>();
                prop_assert!((tape.value(y).at(i, o) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn error_counts_ignore_logit_scale(
        logits in prop::collection::vec(-5.0f64..5.0, 6 * 30),
        scale in 0.1f64..20.0,
    ) {
        let cols = 6;
        let base = AttentionRecord::from_weights(softmax_rows(&logits, cols, 1.0), false);
        let scaled = AttentionRecord::from_weights(softmax_rows(&logits, cols, scale), false);
        let limits = ErrorThresholds::default();
        let a = attention_diagnostics(&base, None, 1, &limits).unwrap();
        let b = attention_diagnostics(&scaled, None, 1, &limits).unwrap();
        prop_assert_eq!((a.regressions, a.stalls, a.jumps), (b.regressions, b.stalls, b.jumps));
    }

    #[test]
    fn regressions_count_decreases(path in prop::collection::vec(0usize..12, 2..60)) {
        let mut w = Tensor::zeros([path.len(), 12]);
        for (t, &p) in path.iter().enumerate() {
            w.data_mut()[t * 12 + p] = 1.0;
        }
        let r = attention_diagnostics(&AttentionRecord::from_weights(w, false), None, 1, &ErrorThresholds::default())
            .unwrap();
        let decreases = path.windows(2).filter(|p| p[1] < p[0]).count();
        let big_steps = path.windows(2).filter(|p| p[1] > p[0] + 4).count();
        prop_assert_eq!(r.regressions, decreases);
        prop_assert_eq!(r.jumps, big_steps);
    }

    #[test]
    fn pca_coordinates_are_centred_and_ordered(
        values in prop::collection::vec(-3.0f64..3.0, 6 * 4),
    ) {
        let table = Tensor::new([6, 4], values).unwrap();
        let pca = speaker_pca(&table).unwrap();
        for k in 0..2 {
            let mean: f64 = pca.coords.iter().map(|c| c[k]).sum::<f64>() / 6.0;
            prop_assert!(mean.abs() < 1e-9);
        }
        prop_assert!(pca.variances[0] + 1e-9 >= pca.variances[1]);
        prop_assert!(pca.variances[1] >= -1e-12);
        prop_assert!(pca.variances[0] + pca.variances[1] <= pca.total_variance + 1e-9);
    }

    #[test]
    fn mel_scale_round_trips(hz in 0.0f64..12_000.0) {
        let back = mel_to_hz(hz_to_mel(hz));
        prop_assert!((back - hz).abs() < 1e-9 * hz.max(1.0));
        prop_assert!(hz_to_mel(hz + 1.0) > hz_to_mel(hz));
    }

    #[test]
    fn letter_text_encodes_one_symbol_per_character(words in "[a-z]{1,6}( [a-z]{1,6}){0,4}") {
        let table = SymbolTable::english();
        let text = normalize_text(&words).unwrap();
        let seq = encode_characters(&text, &table).unwrap();
        prop_assert_eq!(seq.len(), text.chars().count());
        prop_assert_eq!(seq.decode(&table), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stft_round_trip_restores_the_interior(samples in prop::collection::vec(-1.0f64..1.0, 3000..4000)) {
        let cfg = SpectroConfig::desk();
        let spec = stft(&samples, &cfg).unwrap();
        let back = istft(&spec, samples.len(), &cfg).unwrap();
        prop_assert_eq!(back.len(), samples.len());
        let edge = cfg.window_size;
        for i in edge..samples.len() - edge {
            prop_assert!((back[i] - samples[i]).abs() < 1e-9, "sample {}: {} vs {}", i, back[i], samples[i]);
        }
    }
}
