//! Checkpoint directories: `manifest.json` (model configuration and the
//! parameter list), `weights.bin` (every parameter tensor in declaration
//! order) and, for trained checkpoints, `training.json`.

use std::fs;
use std::path::Path;

use clft_core::config::{ModelConfig, NUM_CLASSES};
use clft_core::fusion::{param_specs, Modality};
use clft_core::params::ParamStore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_json, write_json};
use crate::tensor_io::{load_tensors, save_tensors};

pub const MANIFEST: &str = "manifest.json";
pub const WEIGHTS: &str = "weights.bin";
pub const TRAINING: &str = "training.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub model: ModelConfig,
    pub parameters: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// How a checkpoint was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingInfo {
    pub seed: u64,
    pub modality: Modality,
    /// Epoch whose parameters were kept; absent when no epoch ran.
    pub best_epoch: Option<usize>,
    pub steps: usize,
    pub class_weights: [f64; NUM_CLASSES],
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub store: ParamStore,
    pub training: Option<TrainingInfo>,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            model: self.model.clone(),
            parameters: self
                .store
                .iter()
                .map(|(name, t)| ParamEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        write_json(&dir.join(MANIFEST), &manifest)?;
        save_tensors(&dir.join(WEIGHTS), self.store.tensors())?;
        let training = dir.join(TRAINING);
        match &self.training {
            Some(info) => write_json(&training, info)?,
            None if training.exists() => fs::remove_file(&training).map_err(|e| Error::io(&training, e))?,
            None => {}
        }
        Ok(())
    }

    /// Loads and checks the weights against the parameters the
    /// configuration declares.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        let manifest: Manifest = read_json(&manifest_path)?;
        manifest.model.validate()?;
        let specs = param_specs(&manifest.model)?;
        let declared: Vec<ParamEntry> = specs
            .iter()
            .map(|s| ParamEntry {
                name: s.name.clone(),
                shape: s.shape.clone(),
            })
            .collect();
        if declared != manifest.parameters {
            return Err(Error::format(
                &manifest_path,
                "parameter list does not match the model configuration",
            ));
        }
        let weights = dir.join(WEIGHTS);
        let tensors = load_tensors(&weights)?;
        let names = specs.iter().map(|s| s.name.clone()).collect();
        let store = ParamStore::from_parts(names, tensors).map_err(|e| Error::format(&weights, e.to_string()))?;
        store
            .matches(&specs)
            .map_err(|e| Error::format(&weights, e.to_string()))?;
        let training_path = dir.join(TRAINING);
        let training = if training_path.exists() {
            Some(read_json(&training_path)?)
        } else {
            None
        };
        Ok(Checkpoint {
            model: manifest.model,
            store,
            training,
        })
    }
}
