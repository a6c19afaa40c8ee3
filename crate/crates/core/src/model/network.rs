use rand::Rng;

use super::config::ModelConfig;
use crate::blocks::{AttentionBlock, AttentionRecord, ConvBlock, RateHeads, Window};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Linear, ParamId, ParamStore, Tensor, Var};

/// Embedding → FC → non-causal conv blocks → FC back to the embedding
/// width.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub embedding: ParamId,
    pub fc_in: Linear,
    pub blocks: Vec<ConvBlock>,
    pub fc_out: Linear,
}

/// PreNet, then (causal conv block, attention block) per layer, then the
/// frame-group and done projections.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub prenet: Vec<Linear>,
    pub layers: Vec<(ConvBlock, AttentionBlock)>,
    pub mel: Linear,
    pub done: Linear,
    pub reduction: usize,
    pub mel_bands: usize,
    /// Dropout before every PreNet layer but the first.
    pub keep_prob: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct WorldHead {
    pub voiced: Linear,
    pub f0: Linear,
    pub envelope: Linear,
    pub aperiodicity: Linear,
}

/// FC that unpacks each decoder step into `r` frames, non-causal conv
/// blocks, then one head per vocoder.
#[derive(Debug, Clone)]
pub struct Converter {
    pub fc_in: Linear,
    pub blocks: Vec<ConvBlock>,
    pub linear: Option<Linear>,
    pub world: Option<WorldHead>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub converter: Converter,
    pub speaker_table: Option<ParamId>,
    pub rate_heads: Option<RateHeads>,
}

impl Network {
    pub fn new(
        cfg: &ModelConfig,
        vocab: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let e = cfg.embedding_dim;
        let s = cfg.speaker_dim;
        let keep = cfg.keep_prob;
        let gain = cfg.conv_gain;

        let embedding = store.add(
            "encoder.embedding",
            Tensor::randn([vocab, e], cfg.embedding_std, rng),
        );
        let [enc_layers, enc_width, enc_ch] = cfg.encoder;
        let fc_in = Linear::new(store, "encoder.fc_in", e, enc_ch, 1.0, rng);
        let blocks = (0..enc_layers)
            .map(|i| {
                let name = format!("encoder.block{i}");
                ConvBlock::new(store, &name, enc_ch, enc_width, false, s, keep, gain, rng)
            })
            .collect::<Result<_>>()?;
        let fc_out = Linear::new(store, "encoder.fc_out", enc_ch, e, 1.0, rng);
        let encoder = Encoder {
            embedding,
            fc_in,
            blocks,
            fc_out,
        };

        let group = cfg.reduction * cfg.mel_bands;
        let mut prenet = Vec::with_capacity(cfg.decoder_affine.len());
        let mut width = group;
        for (i, &a) in cfg.decoder_affine.iter().enumerate() {
            prenet.push(Linear::new(store, &format!("decoder.prenet{i}"), width, a, 1.0, rng));
            width = a;
        }
        let c = cfg.decoder_channels();
        let [dec_layers, dec_width] = cfg.decoder;
        let layers = (0..dec_layers)
            .map(|i| {
                let name = format!("decoder.layer{i}");
                let conv = ConvBlock::new(
                    store,
                    &format!("{name}.conv"),
                    c,
                    dec_width,
                    true,
                    s,
                    keep,
                    gain,
                    rng,
                )?;
                let att = AttentionBlock::new(
                    store,
                    &format!("{name}.attention"),
                    c,
                    e,
                    cfg.attention_hidden,
                    keep,
                    rng,
                );
                Ok((conv, att))
            })
            .collect::<Result<_>>()?;
        let mel = Linear::new(store, "decoder.mel", c, group, 1.0, rng);
        let done = Linear::new(store, "decoder.done", c, 1, 1.0, rng);
        let decoder = Decoder {
            prenet,
            layers,
            mel,
            done,
            reduction: cfg.reduction,
            mel_bands: cfg.mel_bands,
            keep_prob: keep,
        };

        let [conv_layers, conv_width, conv_ch] = cfg.converter;
        let r = cfg.reduction;
        let fc_in = Linear::new(store, "converter.fc_in", c, r * conv_ch, 1.0, rng);
        let blocks = (0..conv_layers)
            .map(|i| {
                let name = format!("converter.block{i}");
                ConvBlock::new(store, &name, conv_ch, conv_width, false, s, keep, gain, rng)
            })
            .collect::<Result<_>>()?;
        let bins = cfg.fft_size / 2 + 1;
        let linear = cfg
            .linear_head
            .then(|| Linear::new(store, "converter.linear", conv_ch, bins, 1.0, rng));
        let world = cfg.world_head.then(|| WorldHead {
            voiced: Linear::new(store, "converter.world.voiced", conv_ch, 1, 1.0, rng),
            f0: Linear::new(store, "converter.world.f0", conv_ch, 1, 1.0, rng),
            envelope: Linear::new(
                store,
                "converter.world.envelope",
                conv_ch,
                cfg.envelope_bands,
                1.0,
                rng,
            ),
            aperiodicity: Linear::new(
                store,
                "converter.world.aperiodicity",
                conv_ch,
                cfg.aperiodicity_bands,
                1.0,
                rng,
            ),
        });
        let converter = Converter {
            fc_in,
            blocks,
            linear,
            world,
        };

        let (speaker_table, rate_heads) = match s {
            Some(dim) => {
                let a = cfg.speaker_init;
                let values = (0..cfg.speakers * dim).map(|_| rng.random_range(-a..a)).collect();
                let table = store.add("speaker.embedding", Tensor::new([cfg.speakers, dim], values)?);
                let heads = RateHeads::new(store, "speaker.rate", dim, cfg.position[1], rng)?;
                (Some(table), Some(heads))
            }
            None => (None, None),
        };
        Ok(Network {
            encoder,
            decoder,
            converter,
            speaker_table,
            rate_heads,
        })
    }
}

/// Per-utterance conditioning shared by every block.
#[derive(Debug, Clone, Copy)]
pub struct Conditioning {
    pub speaker: Option<Var>,
    pub key_rate: Var,
    pub query_rate: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `h_k`, `[T_enc × e]`.
    pub keys: Var,
    /// `h_v = √0.5 (h_k + h_e)`.
    pub values: Var,
    /// `h_e`.
    pub embeddings: Var,
}

#[derive(Debug, Clone)]
pub struct DecoderOutput {
    /// `[T_dec · r × mel_bands]`.
    pub mel: Var,
    /// `[T_dec × 1]` logits.
    pub done: Var,
    /// `[T_dec × c]`, fed to the converter.
    pub hidden: Var,
    pub records: Vec<AttentionRecord>,
}

#[derive(Debug, Clone, Copy)]
pub struct WorldOutput {
    pub voiced: Var,
    pub log_f0: Var,
    pub envelope: Var,
    pub aperiodicity: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ConverterOutput {
    /// `[T × fft/2+1]` normalized log magnitudes.
    pub linear: Option<Var>,
    pub world: Option<WorldOutput>,
}

impl Encoder {
    pub fn forward(&self, g: &mut Graph, ids: &[usize], speaker: Option<Var>) -> Result<EncoderOutput> {
        let table = g.param(self.embedding);
        let he = g.embedding(table, ids)?;
        let mut x = self.fc_in.forward(g, he)?;
        for b in &self.blocks {
            x = b.forward(g, x, speaker)?;
        }
        let hk = self.fc_out.forward(g, x)?;
        let hv = g.residual(hk, he)?;
        Ok(EncoderOutput {
            keys: hk,
            values: hv,
            embeddings: he,
        })
    }
}

impl Decoder {
    /// Runs the causal stack on `[T_dec × r·mel]` inputs, where row `t`
    /// holds the frame group preceding step `t`.
    pub fn forward(
        &self,
        g: &mut Graph,
        inputs: Var,
        enc: &EncoderOutput,
        cond: &Conditioning,
        position_weight: f64,
        windows: Option<&[Option<Vec<Window>>]>,
    ) -> Result<DecoderOutput> {
        let mut x = inputs;
        for (i, fc) in self.prenet.iter().enumerate() {
            if i > 0 {
                x = g.dropout(x, self.keep_prob)?;
            }
            x = fc.forward(g, x)?;
            x = g.relu(x);
        }
        let mut records = Vec::with_capacity(self.layers.len());
        for (l, (conv, att)) in self.layers.iter().enumerate() {
            x = conv.forward(g, x, cond.speaker)?;
            let window = windows.and_then(|w| w.get(l)).and_then(|w| w.as_deref());
            let (ctx, record) = att.forward(
                g,
                x,
                enc.keys,
                enc.values,
                cond.key_rate,
                cond.query_rate,
                position_weight,
                window,
            )?;
            records.push(record);
            x = g.residual(x, ctx)?;
        }
        let steps = g.value(x).rows();
        let mel = self.mel.forward(g, x)?;
        let mel = g.reshape(mel, &[steps * self.reduction, self.mel_bands])?;
        let done = self.done.forward(g, x)?;
        Ok(DecoderOutput {
            mel,
            done,
            hidden: x,
            records,
        })
    }
}

impl Converter {
    pub fn forward(
        &self,
        g: &mut Graph,
        hidden: Var,
        reduction: usize,
        speaker: Option<Var>,
    ) -> Result<ConverterOutput> {
        let steps = g.value(hidden).rows();
        let x = self.fc_in.forward(g, hidden)?;
        let c = self.fc_in.out_dim / reduction;
        let mut x = g.reshape(x, &[steps * reduction, c])?;
        for b in &self.blocks {
            x = b.forward(g, x, speaker)?;
        }
        let linear = match &self.linear {
            Some(head) => Some(head.forward(g, x)?),
            None => None,
        };
        let world = match &self.world {
            Some(h) => Some(WorldOutput {
                voiced: h.voiced.forward(g, x)?,
                log_f0: h.f0.forward(g, x)?,
                envelope: h.envelope.forward(g, x)?,
                aperiodicity: h.aperiodicity.forward(g, x)?,
            }),
            None => None,
        };
        Ok(ConverterOutput { linear, world })
    }
}

/// `[T_dec × r·mel]` teacher-forcing inputs: a zero group, then every
/// target group but the last.
pub fn shifted_groups(target: &Tensor, reduction: usize) -> Result<Tensor> {
    let (frames, bands) = (target.rows(), target.cols());
    if frames == 0 || frames % reduction != 0 {
        return Err(Error::shape(
            "decoder targets",
            format!("{frames} frames is not a multiple of r = {reduction}"),
        ));
    }
    let group = reduction * bands;
    let steps = frames / reduction;
    let mut data = vec![0.0; steps * group];
    data[group..].copy_from_slice(&target.data()[..(steps - 1) * group]);
    Tensor::new([steps, group], data)
}
