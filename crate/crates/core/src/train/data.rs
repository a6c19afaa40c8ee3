use crate::dsp::{dataset_ratio, extract_features, AlignmentSpan, MelFilterbank, ToyCorpus};
use crate::error::{Error, Result};
use crate::model::{CorpusStats, ModelConfig, Targets};
use crate::textfront::{encode_characters, encode_mixed, normalize_text, PhonemeDict, SymbolSequence, SymbolTable};

/// One normalized training utterance.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    /// Normalized text.
    pub text: String,
    /// Character encoding of `text` with the speaker attached.
    pub seq: SymbolSequence,
    pub targets: Targets,
    /// Ground-truth symbol spans in frames, when known.
    pub alignment: Option<Vec<AlignmentSpan>>,
}

impl Example {
    /// The sequence fed to the network at one iteration: characters, or a
    /// fresh character/phoneme mix when a dictionary is given.
    pub fn sequence(
        &self,
        table: &SymbolTable,
        dict: Option<&PhonemeDict>,
        phoneme_prob: f64,
        seed: u64,
    ) -> Result<SymbolSequence> {
        match dict {
            Some(d) => Ok(encode_mixed(&self.text, d, table, phoneme_prob, seed)?
                .with_speaker(self.seq.speaker_id)),
            None => Ok(self.seq.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub stats: CorpusStats,
}

impl Dataset {
    /// Features, corpus statistics and normalized targets for every toy
    /// utterance. The statistics (and the position rate) come from all
    /// given utterances.
    pub fn from_toy(corpus: &ToyCorpus, cfg: &ModelConfig, table: &SymbolTable) -> Result<Self> {
        if corpus.utterances.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let spectro = cfg.spectro();
        let fb = MelFilterbank::new(&spectro)?;
        let mut features = Vec::with_capacity(corpus.utterances.len());
        let mut seqs = Vec::with_capacity(corpus.utterances.len());
        for u in &corpus.utterances {
            let text = normalize_text(&u.text)?;
            let seq = encode_characters(&text, table)?.with_speaker(u.speaker);
            let f = extract_features(&u.wave, &spectro, &fb)?;
            if f.frames() != u.world.frames() {
                return Err(Error::shape(
                    "toy features",
                    format!("{}: {} analysis frames, {} world frames", u.id, f.frames(), u.world.frames()),
                ));
            }
            seqs.push((text, seq));
            features.push(f);
        }
        let ratio = dataset_ratio(
            features.iter().zip(&seqs).map(|(f, (_, s))| (f.frames(), s.len())),
            cfg.reduction,
        )?;
        let stats = CorpusStats::compute(&features, ratio)?;
        let mut examples = Vec::with_capacity(features.len());
        for ((u, f), (text, seq)) in corpus.utterances.iter().zip(&features).zip(seqs) {
            let mel = stats.normalize_mel(&f.mel)?;
            let linear = stats.normalize_linear(&f.linear)?;
            let targets = Targets::new(
                &mel,
                cfg.linear_head.then_some(&linear),
                cfg.world_head.then_some(&u.world),
                cfg.reduction,
            )?;
            examples.push(Example {
                id: u.id.clone(),
                text,
                seq,
                targets,
                alignment: Some(u.alignment.clone()),
            });
        }
        Ok(Dataset { examples, stats })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Moves the last `held_out` examples into a second set sharing the
    /// same statistics.
    pub fn split_off(&mut self, held_out: usize) -> Result<Dataset> {
        if held_out >= self.examples.len() {
            return Err(Error::Config(format!(
                "cannot hold out {held_out} of {} utterances",
                self.examples.len()
            )));
        }
        let tail = self.examples.split_off(self.examples.len() - held_out);
        Ok(Dataset {
            examples: tail,
            stats: self.stats.clone(),
        })
    }

    /// Example indices grouped into batches of similar length, longest
    /// last; ties keep corpus order.
    pub fn length_buckets(&self, batch_size: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.sort_by_key(|&i| (self.examples[i].targets.frames(), i));
        order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}
