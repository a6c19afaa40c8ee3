//! Text frontend: normalization, the symbol inventory, CMUdict lookup and
//! mixed character/phoneme encoding.

mod cmudict;
mod corpus;
mod encode;
mod normalize;
mod symbols;

pub use cmudict::PhonemeDict;
pub use corpus::{parse_manifest, read_manifest, write_manifest, ManifestEntry};
pub use encode::{encode_characters, encode_mixed, SymbolSequence};
pub use normalize::normalize_text;
pub use symbols::{
    SymbolKind, SymbolTable, LONG_PAUSE, PAD, PERIOD, PHONEME_PREFIX, QUESTION, SHORT_PAUSE,
    SLURRED, STANDARD_SEPARATOR,
};
