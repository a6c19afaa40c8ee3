use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const SLURRED: char = '+';
pub const STANDARD_SEPARATOR: char = ' ';
pub const SHORT_PAUSE: char = '/';
pub const LONG_PAUSE: char = '%';
pub const PERIOD: char = '.';
pub const QUESTION: char = '?';
/// Phoneme symbols are stored with this prefix so `A` the letter and `AA1`
/// the phoneme can never collide.
pub const PHONEME_PREFIX: char = '@';

const VOWELS: [&str; 15] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
];
const CONSONANTS: [&str; 24] = [
    "B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R", "S", "SH", "T",
    "TH", "V", "W", "Y", "Z", "ZH",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolKind {
    Padding,
    Character,
    Separator,
    Terminal,
    Phoneme,
}

/// Ordered symbol inventory. Index 0 is always padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct SymbolTable {
    symbols: Vec<String>,
    id_of: HashMap<String, usize>,
}

impl From<Vec<String>> for SymbolTable {
    fn from(symbols: Vec<String>) -> Self {
        let id_of = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        SymbolTable { symbols, id_of }
    }
}

impl From<SymbolTable> for Vec<String> {
    fn from(table: SymbolTable) -> Self {
        table.symbols
    }
}

impl Default for SymbolTable {
    fn default() -> Self {
        Self::english()
    }
}

impl SymbolTable {
    /// Uppercase Latin letters, digits, the four separators, both terminals
    /// and the stressed ARPAbet inventory used by CMUdict.
    pub fn english() -> Self {
        let chars: Vec<char> = ('A'..='Z').chain('0'..='9').collect();
        Self::with_characters(&chars)
    }

    /// A table with the given character set plus all separators, terminals
    /// and phonemes.
    pub fn with_characters(chars: &[char]) -> Self {
        let mut symbols = vec![PAD.to_string()];
        let mut push = |s: String| {
            if !symbols.contains(&s) {
                symbols.push(s);
            }
        };
        for sep in [SLURRED, STANDARD_SEPARATOR, SHORT_PAUSE, LONG_PAUSE] {
            push(sep.to_string());
        }
        push(PERIOD.to_string());
        push(QUESTION.to_string());
        for &c in chars {
            push(c.to_string());
        }
        for v in VOWELS {
            for stress in 0..3 {
                push(format!("{PHONEME_PREFIX}{v}{stress}"));
            }
        }
        for c in CONSONANTS {
            push(format!("{PHONEME_PREFIX}{c}"));
        }
        Self::from(symbols)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Result<usize> {
        self.id_of
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::UnknownSymbol {
                symbol: symbol.to_string(),
            })
    }

    pub fn char_id(&self, c: char) -> Result<usize> {
        self.id(c.encode_utf8(&mut [0; 4]))
    }

    /// Looks up a bare ARPAbet phoneme such as `AA1`.
    pub fn phoneme_id(&self, phoneme: &str) -> Result<usize> {
        self.id(&format!("{PHONEME_PREFIX}{phoneme}"))
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn kind(&self, id: usize) -> Option<SymbolKind> {
        let s = self.symbols.get(id)?;
        Some(if id == 0 {
            SymbolKind::Padding
        } else if s.starts_with(PHONEME_PREFIX) && s.len() > 1 {
            SymbolKind::Phoneme
        } else {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) if is_separator(c) => SymbolKind::Separator,
                (Some(c), None) if c == PERIOD || c == QUESTION => SymbolKind::Terminal,
                _ => SymbolKind::Character,
            }
        })
    }

    /// Checks the structural invariants of the table.
    pub fn validate(&self) -> Result<()> {
        if self.symbols.first().map(String::as_str) != Some(PAD) {
            return Err(Error::Config("symbol table must start with padding".into()));
        }
        if self.id_of.len() != self.symbols.len() {
            return Err(Error::Config("symbol table has duplicates".into()));
        }
        for sep in [SLURRED, STANDARD_SEPARATOR, SHORT_PAUSE, LONG_PAUSE, PERIOD, QUESTION] {
            self.char_id(sep)?;
        }
        Ok(())
    }
}

pub(crate) fn is_separator(c: char) -> bool {
    matches!(c, SLURRED | STANDARD_SEPARATOR | SHORT_PAUSE | LONG_PAUSE)
}
