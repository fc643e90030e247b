//! Checkpoint files: a JSON index line followed by the named tensors in
//! index order (each a header line plus a little-endian f64 payload).
//! Tensors are stored sorted by name, so identical state produces identical
//! bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MedMamba, ModelConfig};
use crate::tensor::{read_named, write_named, Tensor};

const MAGIC: &str = "mm-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointIndex {
    magic: String,
    version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
    index: Vec<IndexEntry>,
}

/// Writes named tensors (sorted by name) with an optional embedded config.
pub fn save_checkpoint(
    path: &Path,
    config: Option<&serde_json::Value>,
    tensors: &[(String, Tensor)],
) -> Result<()> {
    let mut sorted: Vec<&(String, Tensor)> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::Checkpoint(format!(
                "duplicate tensor name '{}'",
                pair[0].0
            )));
        }
    }
    let index = CheckpointIndex {
        magic: MAGIC.to_string(),
        version: VERSION,
        config: config.cloned(),
        index: sorted
            .iter()
            .map(|(name, t)| IndexEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &index)?;
    w.write_all(b"\n")?;
    for (name, t) in sorted {
        write_named(&mut w, name, t)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint back as `(embedded config, named tensors)`.
pub fn load_checkpoint(path: &Path) -> Result<(Option<serde_json::Value>, Vec<(String, Tensor)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    std::io::BufRead::read_line(&mut r, &mut line)?;
    let index: CheckpointIndex = serde_json::from_str(line.trim_end())?;
    if index.magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "unrecognized magic '{}'",
            index.magic
        )));
    }
    if index.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            index.version
        )));
    }
    let mut tensors = Vec::with_capacity(index.index.len());
    for entry in &index.index {
        let (name, tensor) = read_named(&mut r)?;
        if name != entry.name || tensor.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "index entry '{}' {:?} does not match stored tensor '{}' {:?}",
                entry.name,
                entry.shape,
                name,
                tensor.shape()
            )));
        }
        tensors.push((name, tensor));
    }
    Ok((index.config, tensors))
}

/// Saves a model with its configuration embedded in the index block.
pub fn save_model(path: &Path, model: &MedMamba) -> Result<()> {
    let config = serde_json::to_value(&model.config)?;
    save_checkpoint(path, Some(&config), &model.named_params())
}

/// Rebuilds a model from a checkpoint written by [`save_model`].
pub fn load_model(path: &Path) -> Result<MedMamba> {
    let (config, tensors) = load_checkpoint(path)?;
    let config: ModelConfig = match config {
        Some(v) => serde_json::from_value(v)?,
        None => {
            return Err(Error::Checkpoint(
                "checkpoint has no embedded model config".into(),
            ))
        }
    };
    let mut model = MedMamba::init(config, 0)?;
    let mut by_name: std::collections::BTreeMap<String, Tensor> = tensors.into_iter().collect();
    let mut missing = Vec::new();
    model.visit_params_mut(&mut |name, t, _| match by_name.remove(name) {
        Some(stored) if stored.shape() == t.shape() => *t = stored,
        Some(stored) => missing.push(format!(
            "{} has shape {:?}, expected {:?}",
            name,
            stored.shape(),
            t.shape()
        )),
        None => missing.push(format!("{} missing", name)),
    });
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!(
            "parameter mismatch: {}",
            missing.join("; ")
        )));
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        return Err(Error::Checkpoint(format!(
            "checkpoint carries unknown tensor '{}'",
            name
        )));
    }
    Ok(model)
}
