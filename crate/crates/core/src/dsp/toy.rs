//! Synthetic corpus with known alignments: every symbol is a fixed
//! harmonic stack of fixed duration, the terminal period is silence of the
//! same duration, and utterances are concatenations.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mel::{log_floor, MelFilterbank};
use super::stft::{magnitude, stft};
use super::wav::{read_wav, write_wav};
use super::{SpectroConfig, Waveform};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::textfront::{read_manifest, write_manifest, ManifestEntry, PERIOD};

/// The terminal symbol, rendered as silence.
pub const SILENCE: char = PERIOD;

const FADE: usize = 80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub utterances: usize,
    pub alphabet: Vec<char>,
    /// Letters per utterance, before the terminal period.
    pub min_symbols: usize,
    pub max_symbols: usize,
    pub samples_per_symbol: usize,
    pub speakers: usize,
    pub sample_rate: u32,
    pub hop: usize,
    pub envelope_bands: usize,
    pub aperiodicity_bands: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            utterances: 200,
            alphabet: ('A'..='H').collect(),
            min_symbols: 4,
            max_symbols: 10,
            samples_per_symbol: 1600,
            speakers: 1,
            sample_rate: 16_000,
            hop: 200,
            envelope_bands: 8,
            aperiodicity_bands: 4,
        }
    }
}

impl ToySpec {
    pub fn frames_per_symbol(&self) -> usize {
        self.samples_per_symbol / self.hop
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("toy corpus: {m}")));
        if self.alphabet.is_empty() || self.alphabet.contains(&SILENCE) {
            return bad("alphabet must be non-empty and exclude the period");
        }
        if self.min_symbols == 0 || self.min_symbols > self.max_symbols {
            return bad("need 1 ≤ min_symbols ≤ max_symbols");
        }
        if self.hop == 0 || self.samples_per_symbol % self.hop != 0 {
            return bad("samples per symbol must be a multiple of the hop");
        }
        if self.speakers == 0 {
            return bad("need at least one speaker");
        }
        Ok(())
    }

    /// Fundamental-frequency multiplier: the first half of the speakers
    /// forms the low group, the second half the high group.
    pub fn speaker_factor(&self, speaker: usize) -> f64 {
        if self.speakers == 1 {
            return 1.0;
        }
        let group = if speaker < self.speakers / 2 { 1.0 } else { 1.7 };
        group * (1.0 + 0.03 * (speaker % 4) as f64)
    }

    pub fn f0_group(&self, speaker: usize) -> usize {
        usize::from(self.speakers > 1 && speaker >= self.speakers / 2)
    }

    fn symbol_index(&self, c: char) -> Option<usize> {
        self.alphabet.iter().position(|&a| a == c)
    }

    fn voice(&self, s: usize, speaker: usize) -> Voice {
        Voice {
            f0: 110.0 * 2f64.powf(s as f64 / 12.0) * self.speaker_factor(speaker),
            formant: 350.0 + 420.0 * s as f64,
            bandwidth: 260.0,
            noise: 0.04 + 0.04 * (s % 3) as f64,
        }
    }

    /// Concatenated audio for `symbols`; letters outside the alphabet other
    /// than the period are rejected.
    pub fn render(&self, symbols: &[char], speaker: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let n = self.samples_per_symbol;
        let sr = self.sample_rate as f64;
        let mut out = Vec::with_capacity(symbols.len() * n);
        for &c in symbols {
            if c == SILENCE {
                out.extend(std::iter::repeat_n(0.0, n));
                continue;
            }
            let s = self.symbol_index(c).ok_or_else(|| Error::UnknownSymbol {
                symbol: c.to_string(),
            })?;
            let v = self.voice(s, speaker);
            let harmonics: Vec<(f64, f64)> = (1..)
                .map(|h| h as f64 * v.f0)
                .take_while(|&f| f < sr / 2.0 - 200.0)
                .map(|f| (f, v.amplitude(f)))
                .collect();
            let norm: f64 = harmonics.iter().map(|(_, a)| a).sum();
            for i in 0..n {
                let t = i as f64 / sr;
                let tone: f64 = harmonics
                    .iter()
                    .map(|&(f, a)| a * (2.0 * PI * f * t).sin())
                    .sum::<f64>()
                    / norm;
                let noise: f64 = rng.random_range(-1.0..1.0);
                let fade = fade_gain(i, n);
                out.push(0.5 * fade * ((1.0 - v.noise) * tone + v.noise * noise));
            }
        }
        Ok(out)
    }

    fn world_targets(&self, symbols: &[char], speaker: usize) -> WorldTargets {
        let fps = self.frames_per_symbol();
        let frames = symbols.len() * fps;
        let eb = self.envelope_bands;
        let ab = self.aperiodicity_bands;
        let nyquist = self.sample_rate as f64 / 2.0;
        let mut out = WorldTargets {
            voiced: Vec::with_capacity(frames),
            log_f0: Vec::with_capacity(frames),
            envelope: Vec::with_capacity(frames * eb),
            aperiodicity: Vec::with_capacity(frames * ab),
            envelope_bands: eb,
            aperiodicity_bands: ab,
        };
        for &c in symbols {
            let voice = self.symbol_index(c).map(|s| self.voice(s, speaker));
            for _ in 0..fps {
                match &voice {
                    Some(v) => {
                        out.voiced.push(1.0);
                        out.log_f0.push(v.f0.ln());
                        for b in 0..eb {
                            let f = (b as f64 + 0.5) * nyquist / eb as f64;
                            out.envelope.push(log_floor(v.amplitude(f), 1e-5));
                        }
                        out.aperiodicity.extend(std::iter::repeat_n(v.noise, ab));
                    }
                    None => {
                        out.voiced.push(0.0);
                        out.log_f0.push(0.0);
                        out.envelope.extend(std::iter::repeat_n(1e-5f64.ln(), eb));
                        out.aperiodicity.extend(std::iter::repeat_n(1.0, ab));
                    }
                }
            }
        }
        out
    }
}

struct Voice {
    f0: f64,
    formant: f64,
    bandwidth: f64,
    noise: f64,
}

impl Voice {
    fn amplitude(&self, f: f64) -> f64 {
        let z = (f - self.formant) / self.bandwidth;
        (-0.5 * z * z).exp() + 0.15 * (-f / 1500.0).exp()
    }
}

fn fade_gain(i: usize, n: usize) -> f64 {
    let edge = i.min(n - 1 - i);
    if edge >= FADE {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / FADE as f64).cos()
    }
}

/// Frames `[start, end)` rendered for the symbol at `symbol`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignmentSpan {
    pub symbol: usize,
    pub start: usize,
    pub end: usize,
}

/// Per-frame vocoder parameters known by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldTargets {
    pub voiced: Vec<f64>,
    /// Natural log of F0 on voiced frames, 0 elsewhere.
    pub log_f0: Vec<f64>,
    /// `[frames × envelope_bands]` log amplitudes.
    pub envelope: Vec<f64>,
    /// `[frames × aperiodicity_bands]` noise ratios.
    pub aperiodicity: Vec<f64>,
    pub envelope_bands: usize,
    pub aperiodicity_bands: usize,
}

impl WorldTargets {
    pub fn frames(&self) -> usize {
        self.voiced.len()
    }

    fn to_csv(&self) -> String {
        let mut s = String::from("voiced,log_f0");
        for b in 0..self.envelope_bands {
            let _ = write!(s, ",env{b}");
        }
        for b in 0..self.aperiodicity_bands {
            let _ = write!(s, ",ap{b}");
        }
        s.push('\n');
        for t in 0..self.frames() {
            let _ = write!(s, "{},{}", self.voiced[t], self.log_f0[t]);
            let (eb, ab) = (self.envelope_bands, self.aperiodicity_bands);
            for v in &self.envelope[t * eb..(t + 1) * eb] {
                let _ = write!(s, ",{v}");
            }
            for v in &self.aperiodicity[t * ab..(t + 1) * ab] {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    fn from_csv(text: &str, what: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let eb = header.iter().filter(|h| h.starts_with("env")).count();
        let ab = header.iter().filter(|h| h.starts_with("ap")).count();
        let mut out = WorldTargets {
            voiced: vec![],
            log_f0: vec![],
            envelope: vec![],
            aperiodicity: vec![],
            envelope_bands: eb,
            aperiodicity_bands: ab,
        };
        for (n, line) in lines.enumerate() {
            let vals = parse_floats(line, what, n + 2)?;
            if vals.len() != 2 + eb + ab {
                return Err(Error::Parse {
                    what: "world targets",
                    line: n + 2,
                    detail: format!("{what}: expected {} fields", 2 + eb + ab),
                });
            }
            out.voiced.push(vals[0]);
            out.log_f0.push(vals[1]);
            out.envelope.extend_from_slice(&vals[2..2 + eb]);
            out.aperiodicity.extend_from_slice(&vals[2 + eb..]);
        }
        Ok(out)
    }
}

fn parse_floats(line: &str, what: &str, line_no: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            f.trim().parse::<f64>().map_err(|e| Error::Parse {
                what: "world targets",
                line: line_no,
                detail: format!("{what}: {e}"),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyUtterance {
    pub id: String,
    pub speaker: usize,
    /// Letters followed by the terminal period.
    pub text: String,
    pub wave: Waveform,
    pub alignment: Vec<AlignmentSpan>,
    pub world: WorldTargets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub spec: ToySpec,
    pub utterances: Vec<ToyUtterance>,
}

impl ToyCorpus {
    /// Samples are quantized to 16-bit PCM so files read back identically.
    pub fn generate(spec: &ToySpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fps = spec.frames_per_symbol();
        let mut utterances = Vec::with_capacity(spec.utterances);
        for u in 0..spec.utterances {
            let len = rng.random_range(spec.min_symbols..=spec.max_symbols);
            let mut symbols: Vec<char> = (0..len)
                .map(|_| spec.alphabet[rng.random_range(0..spec.alphabet.len())])
                .collect();
            symbols.push(SILENCE);
            let speaker = u % spec.speakers;
            let raw = spec.render(&symbols, speaker, &mut rng)?;
            let samples = raw.iter().map(|s| quantize(*s)).collect();
            let alignment = symbols
                .iter()
                .enumerate()
                .map(|(i, _)| AlignmentSpan {
                    symbol: i,
                    start: i * fps,
                    end: (i + 1) * fps,
                })
                .collect();
            utterances.push(ToyUtterance {
                id: format!("utt{u:04}"),
                speaker,
                text: symbols.iter().collect(),
                wave: Waveform::new(samples, spec.sample_rate)?,
                alignment,
                world: spec.world_targets(&symbols, speaker),
            });
        }
        Ok(ToyCorpus {
            spec: spec.clone(),
            utterances,
        })
    }

    /// Writes `manifest.tsv`, `corpus.json` and per-utterance `wav/`,
    /// `align/` and `world/` files; returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        for sub in ["wav", "align", "world"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let spec_path = dir.join("corpus.json");
        let spec_json = serde_json::to_string_pretty(&self.spec)
            .map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&spec_path, spec_json).map_err(|e| Error::io(&spec_path, e))?;
        let mut entries = Vec::with_capacity(self.utterances.len());
        for u in &self.utterances {
            let wav = PathBuf::from("wav").join(format!("{}.wav", u.id));
            write_wav(dir.join(&wav), &u.wave)?;
            write_alignment(dir.join("align").join(format!("{}.csv", u.id)), &u.alignment)?;
            let world = dir.join("world").join(format!("{}.csv", u.id));
            std::fs::write(&world, u.world.to_csv()).map_err(|e| Error::io(&world, e))?;
            entries.push(ManifestEntry {
                speaker_id: u.speaker,
                text: u.text.clone(),
                audio_path: wav,
            });
        }
        let manifest = dir.join("manifest.tsv");
        write_manifest(&manifest, &entries)?;
        Ok(manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spec_path = dir.join("corpus.json");
        let spec_text =
            std::fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
        let spec: ToySpec =
            serde_json::from_str(&spec_text).map_err(|e| Error::Config(e.to_string()))?;
        let mut utterances = Vec::new();
        for entry in read_manifest(dir.join("manifest.tsv"))? {
            let id = entry
                .audio_path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Config(format!("bad audio path {:?}", entry.audio_path)))?
                .to_string();
            let world_path = dir.join("world").join(format!("{id}.csv"));
            let world_text =
                std::fs::read_to_string(&world_path).map_err(|e| Error::io(&world_path, e))?;
            utterances.push(ToyUtterance {
                speaker: entry.speaker_id,
                text: entry.text,
                wave: read_wav(&entry.audio_path)?,
                alignment: read_alignment(dir.join("align").join(format!("{id}.csv")))?,
                world: WorldTargets::from_csv(&world_text, &world_path.display().to_string())?,
                id,
            });
        }
        Ok(ToyCorpus { spec, utterances })
    }
}

fn quantize(s: f64) -> f64 {
    (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() / i16::MAX as f64
}

pub fn write_alignment(path: impl AsRef<Path>, spans: &[AlignmentSpan]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("symbol,start_frame,end_frame\n");
    for a in spans {
        let _ = writeln!(s, "{},{},{}", a.symbol, a.start, a.end);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_alignment(path: impl AsRef<Path>) -> Result<Vec<AlignmentSpan>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let what = path.display().to_string();
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| {
                s.trim().parse::<usize>().map_err(|e| Error::Parse {
                    what: "alignment",
                    line: n + 1,
                    detail: format!("{what}: {e}"),
                })
            };
            if f.len() != 3 {
                return Err(Error::Parse {
                    what: "alignment",
                    line: n + 1,
                    detail: format!("{what}: expected symbol,start_frame,end_frame"),
                });
            }
            Ok(AlignmentSpan {
                symbol: parse(f[0])?,
                start: parse(f[1])?,
                end: parse(f[2])?,
            })
        })
        .collect()
}

/// Decoder steps per input symbol over a set of `(frames, symbols)` pairs.
pub fn dataset_ratio(lengths: impl IntoIterator<Item = (usize, usize)>, r: usize) -> Result<f64> {
    let (frames, symbols) = lengths
        .into_iter()
        .fold((0, 0), |(f, s), (a, b)| (f + a, s + b));
    if symbols == 0 || frames == 0 || r == 0 {
        return Err(Error::Empty("dataset lengths"));
    }
    Ok(frames as f64 / (r as f64 * symbols as f64))
}

/// Log-mel and linear log-magnitude targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    /// `[T × mel_bands]`.
    pub mel: Tensor,
    /// `[T × fft/2+1]`.
    pub linear: Tensor,
}

impl Features {
    pub fn frames(&self) -> usize {
        self.mel.rows()
    }
}

/// Analysis frames trimmed to `len / hop`, so each frame `t` is centred on
/// sample `t · hop` and every frame lies inside the signal.
pub fn extract_features(
    wave: &Waveform,
    cfg: &SpectroConfig,
    filterbank: &MelFilterbank,
) -> Result<Features> {
    let spec = stft(&wave.samples, cfg)?;
    let keep = wave.len() / cfg.hop;
    let mag = magnitude(&spec);
    let bins = mag.cols();
    let mag = Tensor::new([keep, bins], mag.data()[..keep * bins].to_vec())?;
    let mel = filterbank.log_mel(&mag)?;
    let linear_data = mag.data().iter().map(|&m| log_floor(m, cfg.log_floor)).collect();
    Ok(Features {
        mel,
        linear: Tensor::new([keep, bins], linear_data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToySpec {
        ToySpec {
            utterances: 6,
            speakers: 2,
            ..ToySpec::default()
        }
    }

    #[test]
    fn one_symbol_has_symbol_duration() {
        let spec = ToySpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(spec.render(&['C'], 0, &mut rng).unwrap().len(), 1600);
        assert!(spec.render(&['Z'], 0, &mut rng).is_err());
    }

    #[test]
    fn alignment_is_strictly_monotonic_and_complete() {
        let corpus = ToyCorpus::generate(&small(), 3).unwrap();
        for u in &corpus.utterances {
            let fps = corpus.spec.frames_per_symbol();
            assert_eq!(u.alignment.len(), u.text.chars().count());
            assert_eq!(u.wave.len() / corpus.spec.hop, u.alignment.len() * fps);
            for w in u.alignment.windows(2) {
                assert!(w[1].start > w[0].start);
                assert_eq!(w[1].start, w[0].end);
            }
            assert!(u.text.ends_with(SILENCE));
            assert_eq!(u.world.frames(), u.alignment.len() * fps);
            assert!(u.wave.samples.iter().all(|s| s.abs() <= 1.0));
        }
    }

    #[test]
    fn ratio_matches_frames_per_symbol() {
        let spec = ToySpec {
            utterances: 20,
            ..ToySpec::default()
        };
        let corpus = ToyCorpus::generate(&spec, 1).unwrap();
        let lengths = corpus
            .utterances
            .iter()
            .map(|u| (u.wave.len() / spec.hop, u.text.chars().count()));
        let ratio = dataset_ratio(lengths, 1).unwrap();
        let fps = spec.frames_per_symbol() as f64;
        assert!((ratio / fps - 1.0).abs() < 0.01);
    }

    #[test]
    fn files_round_trip() {
        let corpus = ToyCorpus::generate(&small(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        corpus.write(dir.path()).unwrap();
        let back = ToyCorpus::load(dir.path()).unwrap();
        assert_eq!(back.spec, corpus.spec);
        for (a, b) in corpus.utterances.iter().zip(&back.utterances) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.text, b.text);
            assert_eq!(a.speaker, b.speaker);
            assert_eq!(a.alignment, b.alignment);
            assert_eq!(a.world, b.world);
            for (x, y) in a.wave.samples.iter().zip(&b.wave.samples) {
                assert!((x - y).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn speaker_groups_shift_pitch() {
        let spec = ToySpec {
            speakers: 8,
            ..ToySpec::default()
        };
        assert_eq!(spec.f0_group(3), 0);
        assert_eq!(spec.f0_group(4), 1);
        assert!(spec.speaker_factor(4) > 1.5 * spec.speaker_factor(3));
    }

    #[test]
    fn features_have_one_frame_per_hop() {
        let cfg = SpectroConfig::desk();
        let fb = MelFilterbank::new(&cfg).unwrap();
        let corpus = ToyCorpus::generate(&small(), 2).unwrap();
        let u = &corpus.utterances[0];
        let f = extract_features(&u.wave, &cfg, &fb).unwrap();
        assert_eq!(f.frames(), u.wave.len() / cfg.hop);
        assert_eq!(f.linear.cols(), cfg.bins());
        assert_eq!(f.mel.cols(), cfg.mel_bands);
    }
}
