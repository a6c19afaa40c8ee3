use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::SpectroConfig;
use crate::error::{Error, Result};

/// Inference arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Every hyperparameter of the network, its training and its synthesis.
/// The first block of keys uses the conventional hyperparameter row names
/// as TOML keys; the rest are implementation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(rename = "FFT Size")]
    pub fft_size: usize,
    #[serde(rename = "FFT Window Size / Shift")]
    pub window_shift: [usize; 2],
    #[serde(rename = "Audio Sample Rate")]
    pub sample_rate: u32,
    #[serde(rename = "Reduction Factor r")]
    pub reduction: usize,
    #[serde(rename = "Mel Bands")]
    pub mel_bands: usize,
    #[serde(rename = "Sharpening Factor")]
    pub sharpening: f64,
    #[serde(rename = "Character Embedding Dim.")]
    pub embedding_dim: usize,
    #[serde(rename = "Encoder Layers / Conv. Width / Channels")]
    pub encoder: [usize; 3],
    /// PreNet widths; the last one is also the decoder channel count.
    #[serde(rename = "Decoder Affine Size")]
    pub decoder_affine: Vec<usize>,
    #[serde(rename = "Decoder Layers / Conv. Width")]
    pub decoder: [usize; 2],
    #[serde(rename = "Attention Hidden Size")]
    pub attention_hidden: usize,
    #[serde(rename = "Position Weight / Initial Rate")]
    pub position: [f64; 2],
    #[serde(rename = "Converter Layers / Conv. Width / Channels")]
    pub converter: [usize; 3],
    #[serde(rename = "Dropout Keep Probability")]
    pub keep_prob: f64,
    #[serde(rename = "Number of Speakers")]
    pub speakers: usize,
    #[serde(rename = "Speaker Embedding Dim.", with = "dash")]
    pub speaker_dim: Option<usize>,
    #[serde(rename = "ADAM Learning Rate")]
    pub learning_rate: f64,
    #[serde(rename = "Anneal Rate / Anneal Interval", with = "dash")]
    pub anneal: Option<(f64, u64)>,
    #[serde(rename = "Batch Size")]
    pub batch_size: usize,
    #[serde(rename = "Max Gradient Norm")]
    pub max_grad_norm: f64,
    #[serde(rename = "Gradient Clipping Max. Value")]
    pub clip_value: f64,

    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    pub embedding_std: f64,
    /// Speaker embeddings start uniform in `[-speaker_init, speaker_init)`.
    pub speaker_init: f64,
    pub conv_gain: f64,
    pub linear_head: bool,
    pub world_head: bool,
    pub envelope_bands: usize,
    pub aperiodicity_bands: usize,
    pub mel_loss_weight: f64,
    pub done_loss_weight: f64,
    pub linear_loss_weight: f64,
    pub voiced_loss_weight: f64,
    pub f0_loss_weight: f64,
    pub envelope_loss_weight: f64,
    pub aperiodicity_loss_weight: f64,
    pub phoneme_prob: f64,
    pub done_threshold: f64,
    /// Inference step budget as a multiple of the rate-predicted length.
    pub max_steps_factor: f64,
    pub window_width: usize,
    pub constrained_layers: Vec<usize>,
    pub griffin_lim_iterations: usize,
    pub precision: Precision,
    pub checkpoint_interval: u64,
}

/// `"-"` stands for a disabled row.
mod dash {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, T: Serialize>(v: &Option<T>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => x.serialize(s),
            None => "-".serialize(s),
        }
    }

    pub fn deserialize<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
    where
        D: Deserializer<'de>,
        T: Deserialize<'de>,
    {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Field<T> {
            Value(T),
            Text(String),
        }
        match Field::<T>::deserialize(d)? {
            Field::Value(v) => Ok(Some(v)),
            Field::Text(t) if t.trim() == "-" => Ok(None),
            Field::Text(t) => Err(serde::de::Error::custom(format!("expected a value or \"-\", got {t:?}"))),
        }
    }
}

impl ModelConfig {
    /// Single-speaker reference settings.
    pub fn single_speaker() -> Self {
        ModelConfig {
            fft_size: 4096,
            window_shift: [2400, 600],
            sample_rate: 48_000,
            reduction: 4,
            mel_bands: 80,
            sharpening: 1.4,
            embedding_dim: 256,
            encoder: [7, 5, 64],
            decoder_affine: vec![128, 256],
            decoder: [4, 5],
            attention_hidden: 128,
            position: [1.0, 6.3],
            converter: [5, 5, 256],
            keep_prob: 0.95,
            speakers: 1,
            speaker_dim: None,
            learning_rate: 0.001,
            anneal: None,
            batch_size: 16,
            max_grad_norm: 100.0,
            clip_value: 5.0,
            fmin: 0.0,
            fmax: 24_000.0,
            log_floor: 1e-5,
            embedding_std: 0.1,
            speaker_init: 0.1,
            conv_gain: crate::blocks::CONV_GAIN,
            linear_head: true,
            world_head: false,
            envelope_bands: 8,
            aperiodicity_bands: 4,
            mel_loss_weight: 1.0,
            done_loss_weight: 1.0,
            linear_loss_weight: 1.0,
            voiced_loss_weight: 1.0,
            f0_loss_weight: 1.0,
            envelope_loss_weight: 1.0,
            aperiodicity_loss_weight: 1.0,
            phoneme_prob: 0.5,
            done_threshold: 0.5,
            max_steps_factor: 4.0,
            window_width: crate::blocks::WINDOW_WIDTH,
            constrained_layers: vec![0, 2],
            griffin_lim_iterations: 60,
            precision: Precision::F64,
            checkpoint_interval: 1000,
        }
    }

    /// 108-speaker reference settings.
    pub fn vctk() -> Self {
        ModelConfig {
            encoder: [7, 5, 128],
            decoder: [6, 5],
            attention_hidden: 256,
            position: [0.1, 7.6],
            converter: [6, 5, 256],
            speakers: 108,
            speaker_dim: Some(16),
            learning_rate: 0.0005,
            anneal: Some((0.98, 30_000)),
            ..Self::single_speaker()
        }
    }

    /// 2484-speaker reference settings.
    pub fn librispeech() -> Self {
        ModelConfig {
            window_shift: [1600, 400],
            sample_rate: 16_000,
            fmax: 8_000.0,
            encoder: [7, 5, 256],
            decoder: [8, 5],
            attention_hidden: 256,
            position: [0.1, 2.6],
            converter: [8, 5, 256],
            keep_prob: 0.99,
            speakers: 2484,
            speaker_dim: Some(512),
            learning_rate: 0.0005,
            anneal: Some((0.95, 30_000)),
            max_grad_norm: 50.0,
            ..Self::single_speaker()
        }
    }

    /// Scaled-down audio front end (16 kHz, FFT 1024, window 800,
    /// hop 200) with a small network, for the synthetic corpus.
    pub fn desk() -> Self {
        ModelConfig {
            fft_size: 1024,
            window_shift: [800, 200],
            sample_rate: 16_000,
            fmax: 8_000.0,
            reduction: 2,
            embedding_dim: 32,
            encoder: [3, 5, 32],
            decoder_affine: vec![32, 32],
            decoder: [3, 5],
            attention_hidden: 32,
            position: [1.0, 4.0],
            converter: [2, 5, 32],
            ..Self::single_speaker()
        }
    }

    /// The smallest useful network: 2 encoder layers, 1 decoder layer,
    /// 8 encoder/converter channels.
    pub fn tiny() -> Self {
        ModelConfig {
            encoder: [2, 5, 8],
            decoder: [1, 5],
            converter: [1, 5, 8],
            ..Self::desk()
        }
    }

    /// Desk network with 8 speakers and 16-dimensional speaker embeddings.
    pub fn desk_multi_speaker(speakers: usize) -> Self {
        ModelConfig {
            speakers,
            speaker_dim: Some(16),
            position: [0.1, 4.0],
            ..Self::desk()
        }
    }

    pub fn spectro(&self) -> SpectroConfig {
        SpectroConfig {
            sample_rate: self.sample_rate,
            fft_size: self.fft_size,
            window_size: self.window_shift[0],
            hop: self.window_shift[1],
            mel_bands: self.mel_bands,
            fmin: self.fmin,
            fmax: self.fmax,
            sharpening: self.sharpening,
            log_floor: self.log_floor,
        }
    }

    pub fn decoder_channels(&self) -> usize {
        *self.decoder_affine.last().unwrap_or(&self.embedding_dim)
    }

    pub fn multi_speaker(&self) -> bool {
        self.speakers > 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.spectro().validate()?;
        if self.reduction == 0 {
            return bad("reduction factor must be at least 1".into());
        }
        for (name, w) in [
            ("encoder", self.encoder[1]),
            ("decoder", self.decoder[1]),
            ("converter", self.converter[1]),
        ] {
            if w % 2 == 0 {
                return bad(format!("{name} conv width {w} must be odd"));
            }
        }
        if self.decoder_affine.is_empty() {
            return bad("decoder affine sizes must not be empty".into());
        }
        let dims = [
            self.embedding_dim,
            self.encoder[2],
            self.converter[2],
            self.attention_hidden,
            self.decoder_channels(),
        ];
        if dims.contains(&0) || self.decoder[0] == 0 {
            return bad("layer widths and decoder depth must be positive".into());
        }
        if self.embedding_dim % 2 != 0 || self.decoder_channels() % 2 != 0 {
            return bad("positional encodings need even key and query widths".into());
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad(format!("keep probability {}", self.keep_prob));
        }
        if self.speakers == 0 {
            return bad("need at least one speaker".into());
        }
        if self.multi_speaker() != self.speaker_dim.is_some() {
            return bad("speaker embedding dim must be set exactly when speakers > 1".into());
        }
        if !(self.position[1] > 0.0) {
            return Err(Error::NonPositiveRate(self.position[1]));
        }
        if !self.linear_head && !self.world_head {
            return bad("at least one converter head must be enabled".into());
        }
        if !(self.speaker_init > 0.0) {
            return bad(format!("speaker init half-width {}", self.speaker_init));
        }
        if self.window_width == 0 {
            return bad("monotonic window width must be positive".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file. Keys missing from the file fall back to `base`.
    pub fn load(path: impl AsRef<Path>, base: &Self) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overrides: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let mut table = base.to_table()?;
        for (k, v) in overrides {
            if !table.contains_key(&k) {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
            table.insert(k, v);
        }
        Self::from_table(table)
    }

    /// Applies `PREFIX_<KEY>` variables, where `<KEY>` is the config key
    /// upper-cased with every run of non-alphanumerics replaced by `_`.
    pub fn with_env_overrides(
        &self,
        prefix: &str,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut table = self.to_table()?;
        let keys: Vec<(String, String)> =
            table.keys().map(|k| (format!("{prefix}_{}", env_key(k)), k.clone())).collect();
        let mut changed = false;
        for (name, raw) in vars {
            let Some((_, key)) = keys.iter().find(|(n, _)| *n == name) else {
                continue;
            };
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or(toml::Value::String(raw));
            table.insert(key.clone(), value);
            changed = true;
        }
        if !changed {
            return Ok(self.clone());
        }
        Self::from_table(table)
    }

    fn to_table(&self) -> Result<toml::Table> {
        toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// `"Reduction Factor r"` → `REDUCTION_FACTOR_R`.
pub fn env_key(key: &str) -> String {
    let mut out = String::new();
    for c in key.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_uppercase());
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [
            ModelConfig::single_speaker(),
            ModelConfig::vctk(),
            ModelConfig::librispeech(),
            ModelConfig::desk(),
            ModelConfig::tiny(),
            ModelConfig::desk_multi_speaker(8),
        ] {
            cfg.validate().unwrap();
        }
        assert_eq!(ModelConfig::single_speaker().spectro().bins(), 2049);
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        for cfg in [ModelConfig::single_speaker(), ModelConfig::vctk()] {
            let text = cfg.to_toml().unwrap();
            assert!(text.contains("\"Reduction Factor r\" = 4"));
            assert_eq!(ModelConfig::from_toml(&text).unwrap(), cfg);
        }
        let text = ModelConfig::single_speaker().to_toml().unwrap();
        assert!(text.contains("\"Speaker Embedding Dim.\" = \"-\""));
        assert!(text.contains("\"Anneal Rate / Anneal Interval\" = \"-\""));
    }

    #[test]
    fn rejects_even_widths_and_bad_speakers() {
        let mut cfg = ModelConfig::desk();
        cfg.encoder[1] = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk();
        cfg.speakers = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn env_overrides_apply() {
        assert_eq!(env_key("Reduction Factor r"), "REDUCTION_FACTOR_R");
        assert_eq!(env_key("Speaker Embedding Dim."), "SPEAKER_EMBEDDING_DIM");
        let vars = vec![
            ("CONVTTS_REDUCTION_FACTOR_R".to_string(), "4".to_string()),
            ("CONVTTS_ANNEAL_RATE_ANNEAL_INTERVAL".to_string(), "[0.5, 10]".to_string()),
            ("CONVTTS_PRECISION".to_string(), "f32".to_string()),
            ("UNRELATED".to_string(), "1".to_string()),
        ];
        let cfg = ModelConfig::desk().with_env_overrides("CONVTTS", vars).unwrap();
        assert_eq!(cfg.reduction, 4);
        assert_eq!(cfg.anneal, Some((0.5, 10)));
        assert_eq!(cfg.precision, Precision::F32);
    }

    #[test]
    fn file_overrides_base() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "\"Mel Bands\" = 40\nworld_head = true\n").unwrap();
        let cfg = ModelConfig::load(&path, &ModelConfig::desk()).unwrap();
        assert_eq!(cfg.mel_bands, 40);
        assert!(cfg.world_head);
        std::fs::write(&path, "nonsense = 1\n").unwrap();
        assert!(ModelConfig::load(&path, &ModelConfig::desk()).is_err());
    }
}
