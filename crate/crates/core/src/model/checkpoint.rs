//! JSON checkpoints:
//! `{version, config, norm, split, params: {name: {shape, data}}}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::events::{NormMode, NormStats};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

/// How the training data was split and windowed, so evaluation can rebuild
/// the same test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub window: usize,
    pub seed: u64,
    pub normalization: NormMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    /// Normalization fitted on the training split, if any.
    pub norm: Option<NormStats>,
    pub split: Option<SplitSpec>,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, norm: Option<NormStats>, split: Option<SplitSpec>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: model.cfg.clone(),
            norm,
            split,
            params: model
                .params
                .iter()
                .map(|(_, name, t)| (name.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Mismatch(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    /// Rebuilds the model and checks that every parameter is present with
    /// the shape the config implies.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.clone(), 0)?;
        if model.params.len() != self.params.len() {
            return Err(Error::Mismatch(format!(
                "checkpoint has {} parameters, config implies {}",
                self.params.len(),
                model.params.len()
            )));
        }
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id).to_string();
            let t = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Mismatch(format!("checkpoint lacks parameter {name}")))?;
            let slot = model.params.get_mut(id);
            if t.shape() != slot.shape() {
                return Err(Error::Mismatch(format!(
                    "parameter {name}: checkpoint shape {:?}, config implies {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(model)
    }
}
