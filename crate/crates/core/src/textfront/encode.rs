use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cmudict::PhonemeDict;
use super::symbols::{is_separator, SymbolKind, SymbolTable, PERIOD, QUESTION};
use crate::error::{Error, Result};

/// Encoded utterance: symbol ids ending in a terminal, plus the speaker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolSequence {
    pub ids: Vec<usize>,
    pub speaker_id: usize,
    pub source_text: String,
}

impl SymbolSequence {
    pub fn with_speaker(mut self, speaker_id: usize) -> Self {
        self.speaker_id = speaker_id;
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Concatenates symbol strings. For character-only sequences this
    /// reproduces the normalized text.
    pub fn decode(&self, table: &SymbolTable) -> String {
        self.ids
            .iter()
            .filter_map(|&id| match table.kind(id) {
                Some(SymbolKind::Padding) | None => None,
                _ => table.symbol(id),
            })
            .collect()
    }

    pub fn validate(&self, table: &SymbolTable) -> Result<()> {
        if self.ids.is_empty() {
            return Err(Error::Empty("symbol sequence"));
        }
        for &id in &self.ids {
            if id >= table.len() {
                return Err(Error::SymbolOutOfRange {
                    id,
                    size: table.len(),
                });
            }
        }
        let last = self
            .ids
            .iter()
            .rev()
            .find(|&&id| id != 0)
            .ok_or(Error::Empty("symbol sequence"))?;
        match table.kind(*last) {
            Some(SymbolKind::Terminal) => Ok(()),
            _ => Err(Error::Config(
                "symbol sequence must end with a period or question mark".into(),
            )),
        }
    }
}

/// Splits normalized text into alternating words and single separator or
/// terminal characters.
fn tokens(normalized: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in normalized.char_indices() {
        if is_separator(c) || c == PERIOD || c == QUESTION {
            if let Some(s) = start.take() {
                out.push(&normalized[s..i]);
            }
            out.push(&normalized[i..i + c.len_utf8()]);
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(&normalized[s..]);
    }
    out
}

fn is_word(token: &str) -> bool {
    token
        .chars()
        .next()
        .is_some_and(|c| !is_separator(c) && c != PERIOD && c != QUESTION)
}

/// Character-level encoding of already normalized text.
pub fn encode_characters(normalized: &str, table: &SymbolTable) -> Result<SymbolSequence> {
    let ids = normalized
        .chars()
        .map(|c| table.char_id(c))
        .collect::<Result<Vec<_>>>()?;
    let seq = SymbolSequence {
        ids,
        speaker_id: 0,
        source_text: normalized.to_string(),
    };
    seq.validate(table)?;
    Ok(seq)
}

/// Encodes normalized text, replacing each in-dictionary word by its
/// phonemes with probability `phoneme_prob`. One uniform draw is made per
/// in-dictionary word, so the result is a pure function of `rng_seed`.
pub fn encode_mixed(
    normalized: &str,
    dict: &PhonemeDict,
    table: &SymbolTable,
    phoneme_prob: f64,
    rng_seed: u64,
) -> Result<SymbolSequence> {
    if !(0.0..=1.0).contains(&phoneme_prob) {
        return Err(Error::InvalidProbability {
            name: "phoneme_prob",
            value: phoneme_prob,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut ids = Vec::with_capacity(normalized.len());
    for token in tokens(normalized) {
        if is_word(token) {
            if let Some(phones) = dict.get(token) {
                let draw: f64 = rng.random();
                if draw < phoneme_prob {
                    for p in phones {
                        ids.push(table.phoneme_id(p)?);
                    }
                    continue;
                }
            }
        }
        for c in token.chars() {
            ids.push(table.char_id(c)?);
        }
    }
    let seq = SymbolSequence {
        ids,
        speaker_id: 0,
        source_text: normalized.to_string(),
    };
    seq.validate(table)?;
    Ok(seq)
}
