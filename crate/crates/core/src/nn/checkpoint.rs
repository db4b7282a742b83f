//! JSON checkpoints of named tensors.
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so save then load reproduces every bit.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::ParamStore;
use super::tensor::Tensor;
use super::NnError;

pub const CHECKPOINT_FORMAT: &str = "bgm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Hash of the run configuration that produced the weights.
    pub config_hash: String,
    /// Free-form tags such as the held-out scene or ablation flags.
    pub meta: std::collections::BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, config_hash: &str) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            meta: Default::default(),
            tensors: store
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Copies tensors into `store` by name. Every store entry must be present
    /// with a matching shape.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<(), NnError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.tensors.len() != store.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for nt in &self.tensors {
            let id = store
                .find(&nt.name)
                .ok_or_else(|| NnError::Checkpoint(format!("unexpected tensor {}", nt.name)))?;
            if store.get(id).shape() != nt.shape.as_slice() {
                return Err(NnError::Checkpoint(format!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    nt.name,
                    nt.shape,
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = Tensor::new(nt.shape.clone(), nt.data.clone())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let io = |e: std::io::Error| NnError::Checkpoint(format!("{}: {e}", path.display()));
        let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
        serde_json::to_writer(&mut w, self).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let f = fs::File::open(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_reader(BufReader::new(f)).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }
}
