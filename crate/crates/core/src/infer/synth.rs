use num_traits::Float;

use super::engine::{fused_decode_step, DecodingStream, InferenceModel, UtteranceContext};
use crate::blocks::AttentionRecord;
use crate::dsp::{griffin_lim, Waveform};
use crate::error::Result;
use crate::model::Model;
use crate::tensor::Tensor;
use crate::textfront::SymbolSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub constraint: bool,
    /// Decoder attention layers that get the window; indices past the last
    /// layer are ignored.
    pub constrained_layers: Vec<usize>,
    /// `None` uses the config's multiple of the rate-predicted length.
    pub max_steps: Option<usize>,
    /// Griffin-Lim only runs when the model has a linear head.
    pub vocoder: bool,
    pub griffin_lim_seed: u64,
}

impl SynthesisOptions {
    pub fn from_model(model: &Model, constraint: bool) -> Self {
        SynthesisOptions {
            constraint,
            constrained_layers: model.config.constrained_layers.clone(),
            max_steps: None,
            vocoder: true,
            griffin_lim_seed: 0,
        }
    }

    /// Per-layer window switches.
    pub fn layer_mask(&self, layers: usize) -> Vec<bool> {
        (0..layers)
            .map(|l| self.constraint && self.constrained_layers.contains(&l))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    /// Log-mel frames, denormalized, `[steps · r × mel]`.
    pub mel: Tensor,
    /// Linear log magnitudes, denormalized.
    pub linear: Option<Tensor>,
    pub wave: Option<Waveform>,
    pub records: Vec<AttentionRecord>,
    pub steps: usize,
    /// The step budget ran out before the done flag fired.
    pub truncated: bool,
}

/// `factor · ratio · T_enc` decoder steps, at least one.
pub fn default_max_steps(model: &Model, symbols: usize) -> usize {
    let predicted = model.stats.dataset_ratio * symbols as f64;
    ((model.config.max_steps_factor * predicted).ceil() as usize).max(1)
}

/// Decodes until the done flag or the step budget, then runs the
/// converter and (optionally) Griffin-Lim.
pub fn synthesize<T: Float>(
    model: &Model,
    engine: &InferenceModel<T>,
    seq: &SymbolSequence,
    opts: &SynthesisOptions,
) -> Result<Synthesis> {
    seq.validate(&model.vocab)?;
    let max_steps = opts.max_steps.unwrap_or_else(|| default_max_steps(model, seq.len()));
    let ctx = UtteranceContext::new(model, seq)?;
    let mask = opts.layer_mask(engine.num_layers());
    let mut stream = DecodingStream::new(engine, &ctx, &mask, max_steps)?;
    while !stream.is_done() && !stream.exhausted() {
        fused_decode_step(&mut stream, engine)?;
    }
    finish(model, &stream, opts)
}

/// Converter, denormalization and vocoder for a finished stream.
pub fn finish<T: Float>(model: &Model, stream: &DecodingStream<T>, opts: &SynthesisOptions) -> Result<Synthesis> {
    let cfg = &model.config;
    let hidden = stream.hidden_tensor(cfg.decoder_channels())?;
    let mut g = model.graph(false, 0);
    let cond = model.conditioning(&mut g, stream.speaker_id())?;
    let h = g.leaf(hidden);
    let conv = model.convert(&mut g, h, &cond)?;
    let linear = match conv.linear {
        Some(v) => Some(model.stats.denormalize_linear(g.value(v))?),
        None => None,
    };
    // Too few frames to span one analysis window leaves no audio.
    let spectro = cfg.spectro();
    let wave = match (&linear, opts.vocoder) {
        (Some(l), true) if l.rows().saturating_sub(1) * spectro.hop >= spectro.window_size => {
            Some(griffin_lim(l, &spectro, cfg.griffin_lim_iterations, opts.griffin_lim_seed)?)
        }
        _ => None,
    };
    Ok(Synthesis {
        mel: model.stats.denormalize_mel(&stream.mel_tensor(cfg.mel_bands)?)?,
        linear,
        wave,
        records: stream.records()?,
        steps: stream.steps(),
        truncated: !stream.is_done(),
    })
}
