//! Encoder, decoder and converter, their multi-task objective and
//! checkpoints.

mod checkpoint;
mod config;
mod loss;
mod network;
mod stats;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{env_key, ModelConfig, Precision};
pub use loss::{total_loss, LossBreakdown, LossWeights, Targets};
pub use network::{
    shifted_groups, Conditioning, Converter, ConverterOutput, Decoder, DecoderOutput, Encoder,
    EncoderOutput, Network, WorldHead, WorldOutput,
};
pub use stats::CorpusStats;

use crate::blocks::{position_rates, SpeakerRates, Window};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};
use crate::textfront::{SymbolSequence, SymbolTable};

/// A network with its parameters, vocabulary and target statistics.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: SymbolTable,
    pub stats: CorpusStats,
    pub store: ParamStore,
    pub net: Network,
}

/// Every output of one teacher-forced pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub cond: Conditioning,
    pub encoder: EncoderOutput,
    pub decoder: DecoderOutput,
    pub converter: ConverterOutput,
}

impl Model {
    /// Fresh parameters from `seed`. The key position rate starts at the
    /// config's initial rate.
    pub fn new(config: ModelConfig, vocab: SymbolTable, stats: CorpusStats, seed: u64) -> Result<Self> {
        config.validate()?;
        if stats.mel_mean.len() != config.mel_bands || stats.linear_mean.len() != config.spectro().bins() {
            return Err(Error::Config("corpus statistics do not match the config".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(&config, vocab.len(), &mut store, &mut rng)?;
        Ok(Model {
            config,
            vocab,
            stats,
            store,
            net,
        })
    }

    pub fn graph(&self, training: bool, seed: u64) -> Graph<'_> {
        Graph::new(&self.store, training, seed)
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_coordinates()
    }

    /// Speaker embedding row (`[1 × s]`) for multi-speaker models.
    pub fn speaker(&self, g: &mut Graph, speaker_id: usize) -> Result<Option<Var>> {
        match self.net.speaker_table {
            Some(table) => {
                if speaker_id >= self.config.speakers {
                    return Err(Error::SpeakerOutOfRange {
                        id: speaker_id,
                        count: self.config.speakers,
                    });
                }
                let t = g.param(table);
                g.embedding(t, &[speaker_id]).map(Some)
            }
            None if speaker_id == 0 => Ok(None),
            None => Err(Error::SpeakerOutOfRange {
                id: speaker_id,
                count: 1,
            }),
        }
    }

    /// Speaker embedding and both position rates.
    pub fn conditioning(&self, g: &mut Graph, speaker_id: usize) -> Result<Conditioning> {
        let speaker = self.speaker(g, speaker_id)?;
        let (key_rate, query_rate) = match (&self.net.rate_heads, speaker) {
            (Some(heads), Some(s)) => heads.forward(g, s)?,
            _ => {
                let (k, q) = position_rates(self.stats.dataset_ratio, SpeakerRates::Single)?;
                (g.leaf(Tensor::scalar(k)), g.leaf(Tensor::scalar(q)))
            }
        };
        Ok(Conditioning {
            speaker,
            key_rate,
            query_rate,
        })
    }

    /// `(ω_key, ω_query)` for a speaker, evaluated outside any graph.
    pub fn position_rates(&self, speaker_id: usize) -> Result<(f64, f64)> {
        let mut g = self.graph(false, 0);
        let c = self.conditioning(&mut g, speaker_id)?;
        Ok((g.value(c.key_rate).data()[0], g.value(c.query_rate).data()[0]))
    }

    pub fn encode(&self, g: &mut Graph, seq: &SymbolSequence, cond: &Conditioning) -> Result<EncoderOutput> {
        if seq.ids.is_empty() {
            return Err(Error::Empty("symbol sequence"));
        }
        self.net.encoder.forward(g, &seq.ids, cond.speaker)
    }

    /// `target_mel` is normalized, `[F × mel]` with `F` a multiple of `r`.
    pub fn decode_teacher_forced(
        &self,
        g: &mut Graph,
        enc: &EncoderOutput,
        target_mel: &Tensor,
        cond: &Conditioning,
        windows: Option<&[Option<Vec<Window>>]>,
    ) -> Result<DecoderOutput> {
        if target_mel.cols() != self.config.mel_bands {
            return Err(Error::shape(
                "decoder targets",
                format!("{} mel bands, model has {}", target_mel.cols(), self.config.mel_bands),
            ));
        }
        let inputs = shifted_groups(target_mel, self.config.reduction)?;
        let x = g.leaf(inputs);
        self.net
            .decoder
            .forward(g, x, enc, cond, self.config.position[0], windows)
    }

    pub fn convert(&self, g: &mut Graph, hidden: Var, cond: &Conditioning) -> Result<ConverterOutput> {
        self.net
            .converter
            .forward(g, hidden, self.config.reduction, cond.speaker)
    }

    /// Encoder, teacher-forced decoder and converter in one graph.
    pub fn forward(&self, g: &mut Graph, seq: &SymbolSequence, target_mel: &Tensor) -> Result<ForwardOutput> {
        let cond = self.conditioning(g, seq.speaker_id)?;
        let encoder = self.encode(g, seq, &cond)?;
        let decoder = self.decode_teacher_forced(g, &encoder, target_mel, &cond, None)?;
        let converter = self.convert(g, decoder.hidden, &cond)?;
        Ok(ForwardOutput {
            cond,
            encoder,
            decoder,
            converter,
        })
    }

    /// Teacher-forced loss for one utterance.
    pub fn loss(&self, g: &mut Graph, seq: &SymbolSequence, targets: &Targets) -> Result<(Var, LossBreakdown)> {
        let out = self.forward(g, seq, &targets.mel)?;
        total_loss(
            g,
            &out.decoder,
            &out.converter,
            targets,
            &LossWeights::from_config(&self.config),
        )
    }
}
