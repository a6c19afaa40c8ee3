use std::collections::HashMap;
use std::path::Path;

use super::symbols::SymbolTable;
use crate::error::{Error, Result};

/// Word to phoneme map in CMUdict 0.6b layout.
#[derive(Debug, Clone, Default)]
pub struct PhonemeDict {
    entries: HashMap<String, Vec<String>>,
}

impl PhonemeDict {
    /// Parses `WORD  PH1 PH2 ...` lines. `;;;` lines are comments and
    /// `WORD(2)` variants are ignored in favour of the first pronunciation.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with(";;;") {
                continue;
            }
            let (word, phones) = line.split_once("  ").ok_or_else(|| Error::Parse {
                what: "cmudict entry",
                line: lineno + 1,
                detail: "expected two spaces between word and phonemes".into(),
            })?;
            if word.ends_with(')') && word.contains('(') {
                continue;
            }
            let phones: Vec<String> = phones.split_whitespace().map(str::to_string).collect();
            if phones.is_empty() {
                return Err(Error::Parse {
                    what: "cmudict entry",
                    line: lineno + 1,
                    detail: "no phonemes".into(),
                });
            }
            entries.entry(word.to_uppercase()).or_insert(phones);
        }
        Ok(PhonemeDict { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, word: &str, phonemes: &[&str]) {
        self.entries.insert(
            word.to_uppercase(),
            phonemes.iter().map(|p| p.to_string()).collect(),
        );
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every phoneme used by the dictionary must exist in `table`.
    pub fn check_against(&self, table: &SymbolTable) -> Result<()> {
        for phones in self.entries.values() {
            for p in phones {
                table.phoneme_id(p)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = ";;; comment line
HELLO  HH AH0 L OW1
HELLO(2)  HH EH0 L OW1
WORLD  W ER1 L D
";

    #[test]
    fn parses_and_takes_first_variant() {
        let d = PhonemeDict::parse(SAMPLE).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.get("HELLO").unwrap(), ["HH", "AH0", "L", "OW1"]);
        d.check_against(&SymbolTable::english()).unwrap();
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = PhonemeDict::parse("GOOD  G UH1 D\nBAD\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn unknown_phoneme_is_named() {
        let mut d = PhonemeDict::default();
        d.insert("X", &["QQ9"]);
        let err = d.check_against(&SymbolTable::english()).unwrap_err();
        assert!(err.to_string().contains("QQ9"));
    }
}
