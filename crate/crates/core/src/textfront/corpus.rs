use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One manifest line: `speaker_id<TAB>annotated_text<TAB>audio_path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub speaker_id: usize,
    pub text: String,
    pub audio_path: PathBuf,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: &str| Error::Parse {
            what: "corpus manifest",
            line: i + 1,
            detail: detail.to_string(),
        };
        let mut fields = line.split('\t');
        let (Some(spk), Some(text), Some(path), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad("expected three tab-separated fields"));
        };
        let speaker_id = spk.trim().parse().map_err(|_| bad("speaker id"))?;
        out.push(ManifestEntry {
            speaker_id,
            text: text.to_string(),
            audio_path: PathBuf::from(path),
        });
    }
    Ok(out)
}

/// Reads a manifest; relative audio paths resolve against its directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = parse_manifest(&text)?;
    for e in &mut entries {
        if e.audio_path.is_relative() {
            e.audio_path = base.join(&e.audio_path);
        }
    }
    Ok(entries)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for e in entries {
        let _ = writeln!(s, "{}\t{}\t{}", e.speaker_id, e.text, e.audio_path.display());
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines() {
        let m = parse_manifest("0\tHELLO%THERE.\ta.wav\n3\tBYE.\tsub/b.wav\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].speaker_id, 3);
        assert_eq!(m[1].audio_path, PathBuf::from("sub/b.wav"));
    }

    #[test]
    fn rejects_missing_field() {
        let err = parse_manifest("0\tHELLO.\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
