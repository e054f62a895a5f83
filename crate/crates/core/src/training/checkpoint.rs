//! Checkpoint archive: model and optimizer arrays plus the run configuration.
//!
//! Arrays are stored as `param/<name>`, `adam.m/<name>`, `adam.v/<name>` and
//! `adam.steps/<name>`. The archive hash identifies the model in bitstreams.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::{read_archive, write_archive};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamSlot, ParamStore};
use crate::tensor::Tensor;

use super::Model;

const KIND: &str = "navc-checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamStore,
    pub adam: Adam,
    /// Optimizer steps taken since initialization, across stages.
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    kind: String,
    step: u64,
    config: TrainConfig,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let doc = serde_json::to_string(&Doc {
            kind: KIND.into(),
            step: self.step,
            config: self.config.clone(),
        })?;
        let mut arrays: Vec<(String, Tensor)> = Vec::new();
        for (name, t) in self.params.iter() {
            arrays.push((format!("param/{name}"), t.clone()));
        }
        for (name, slot) in &self.adam.slots {
            arrays.push((format!("adam.m/{name}"), slot.m.clone()));
            arrays.push((format!("adam.v/{name}"), slot.v.clone()));
            arrays.push((format!("adam.steps/{name}"), Tensor::scalar(slot.steps as f64)));
        }
        arrays.sort_by(|a, b| a.0.cmp(&b.0));
        write_archive(&doc, arrays.iter().map(|(k, v)| (k.as_str(), v)))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let archive = read_archive(bytes)?;
        let doc: Doc = serde_json::from_str(&archive.doc)
            .map_err(|e| Error::CorruptCheckpoint(format!("bad document: {e}")))?;
        if doc.kind != KIND {
            return Err(Error::CorruptCheckpoint(format!("archive holds {:?}, not a checkpoint", doc.kind)));
        }
        doc.config.validate()?;
        let mut params = ParamStore::new();
        let mut adam = Adam::default();
        let mut steps = Vec::new();
        for (key, t) in archive.arrays {
            let (kind, name) = key
                .split_once('/')
                .ok_or_else(|| Error::CorruptCheckpoint(format!("unexpected array {key}")))?;
            let slot = || AdamSlot {
                m: Tensor::zeros(&[0]),
                v: Tensor::zeros(&[0]),
                steps: 0,
            };
            match kind {
                "param" => params.insert(name, t),
                "adam.m" => adam.slots.entry(name.to_owned()).or_insert_with(slot).m = t,
                "adam.v" => adam.slots.entry(name.to_owned()).or_insert_with(slot).v = t,
                "adam.steps" => steps.push((name.to_owned(), t)),
                _ => return Err(Error::CorruptCheckpoint(format!("unexpected array {key}"))),
            }
        }
        for (name, t) in steps {
            let v = if t.len() == 1 { t.item() } else { -1.0 };
            if !(v >= 0.0 && v.fract() == 0.0) {
                return Err(Error::CorruptCheckpoint(format!("bad step count for {name}")));
            }
            adam.slots.entry(name).or_insert_with(|| AdamSlot {
                m: Tensor::zeros(&[0]),
                v: Tensor::zeros(&[0]),
                steps: 0,
            }).steps = v as u64;
        }
        for (name, slot) in &adam.slots {
            let shape = params.get(name).map(|p| p.shape());
            if shape != Some(slot.m.shape()) || shape != Some(slot.v.shape()) {
                return Err(Error::CorruptCheckpoint(format!("optimizer state for {name} does not match its parameter")));
            }
        }
        Model::new(&doc.config)?.check_params(&params)?;
        Ok(Self {
            config: doc.config,
            params,
            adam,
            step: doc.step,
        })
    }

    /// Content hash recorded in bitstream headers.
    pub fn hash(&self) -> Result<u64> {
        Ok(read_archive(&self.to_bytes()?)?.hash)
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        let bytes = self.to_bytes()?;
        let hash = read_archive(&bytes)?.hash;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        Ok(hash)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
