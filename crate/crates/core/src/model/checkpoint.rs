use std::path::Path;

use serde_json::{json, Value};

use super::{CorpusStats, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{read_archive, write_archive, Archive, Tensor};
use crate::textfront::SymbolTable;

const FORMAT: &str = "convtts-checkpoint";

/// Writes every model parameter plus `extra` arrays (for example optimizer
/// moments) and `extra_meta` next to the config, vocabulary and corpus
/// statistics.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    extra: &[(String, Tensor)],
    extra_meta: Value,
) -> Result<()> {
    let mut arrays: Vec<(String, Tensor)> = model
        .store
        .iter()
        .map(|(_, name, t)| (format!("param/{name}"), t.clone()))
        .collect();
    arrays.extend(extra.iter().cloned());
    let meta = json!({
        "format": FORMAT,
        "config": serde_json::to_value(&model.config).map_err(|e| Error::Checkpoint(e.to_string()))?,
        "vocab": serde_json::to_value(&model.vocab).map_err(|e| Error::Checkpoint(e.to_string()))?,
        "stats": serde_json::to_value(&model.stats).map_err(|e| Error::Checkpoint(e.to_string()))?,
        "extra": extra_meta,
    });
    write_archive(path, &arrays, meta)
}

/// Rebuilds the model and returns it with the remaining (non-parameter)
/// arrays and the caller's metadata.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, Archive)> {
    let archive = read_archive(path)?;
    let field = |k: &str| {
        archive
            .meta
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("manifest lacks {k:?}")))
    };
    if archive.meta.get("format").and_then(Value::as_str) != Some(FORMAT) {
        return Err(Error::Checkpoint("not a model checkpoint".into()));
    }
    let de = |e: serde_json::Error| Error::Checkpoint(e.to_string());
    let config: ModelConfig = serde_json::from_value(field("config")?).map_err(de)?;
    let vocab: SymbolTable = serde_json::from_value(field("vocab")?).map_err(de)?;
    let stats: CorpusStats = serde_json::from_value(field("stats")?).map_err(de)?;
    let extra_meta = field("extra")?;
    let mut model = Model::new(config, vocab, stats, 0)?;
    let mut params = Vec::new();
    let mut rest = Vec::new();
    for (name, t) in archive.arrays {
        match name.strip_prefix("param/") {
            Some(p) => params.push((p.to_string(), t)),
            None => rest.push((name, t)),
        }
    }
    if params.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "{} parameters stored, model has {}",
            params.len(),
            model.store.len()
        )));
    }
    model.store.load_values(&params)?;
    Ok((
        model,
        Archive {
            arrays: rest,
            meta: extra_meta,
        },
    ))
}
