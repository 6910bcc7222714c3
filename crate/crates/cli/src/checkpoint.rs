//! Checkpoint directories: `manifest.json` plus one little-endian `f32`
//! file per named parameter (batch-norm running statistics included).

use std::fs;
use std::path::Path;

use epd_core::datamodel::PredicatePartition;
use epd_core::model::EpdModel;
use epd_core::numcore::NumArray;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
    pub config: RunConfig,
    pub partition: PredicatePartition,
    pub params: Vec<ParamRecord>,
}

pub fn save(dir: &Path, config: &RunConfig, partition: &PredicatePartition, epoch: usize, model: &EpdModel) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut params = Vec::with_capacity(model.store.len());
    for entry in model.store.entries() {
        let file = format!("{}.f32", entry.name);
        let bytes: Vec<u8> = entry.value.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&file), bytes)?;
        params.push(ParamRecord {
            name: entry.name.clone(),
            shape: entry.value.shape().to_vec(),
            trainable: entry.trainable,
            file,
        });
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        epoch,
        config: config.clone(),
        partition: partition.clone(),
        params,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if m.format_version != CHECKPOINT_VERSION {
        return Err(CliError::Data(format!(
            "checkpoint format {} is not supported (expected {CHECKPOINT_VERSION})",
            m.format_version
        )));
    }
    Ok(m)
}

/// Rebuilds the model described by the manifest and fills in every stored
/// parameter.
pub fn load(dir: &Path) -> Result<(Manifest, EpdModel), CliError> {
    let manifest = read_manifest(dir)?;
    let mut model = EpdModel::new(manifest.config.model_config(), manifest.config.seed);
    if model.store.len() != manifest.params.len() {
        return Err(CliError::Data(format!(
            "checkpoint lists {} parameters, model has {}",
            manifest.params.len(),
            model.store.len()
        )));
    }
    for rec in &manifest.params {
        let id = model
            .store
            .find(&rec.name)
            .ok_or_else(|| CliError::Data(format!("checkpoint parameter '{}' is unknown to the model", rec.name)))?;
        let slot = model.store.get_mut(id);
        if slot.shape() != rec.shape.as_slice() {
            return Err(CliError::Data(format!(
                "parameter '{}': checkpoint shape {:?}, model shape {:?}",
                rec.name,
                rec.shape,
                slot.shape()
            )));
        }
        let bytes = fs::read(dir.join(&rec.file))?;
        if bytes.len() != slot.len() * 4 {
            return Err(CliError::Data(format!(
                "parameter '{}': {} bytes on disk, expected {}",
                rec.name,
                bytes.len(),
                slot.len() * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        *slot = NumArray::new(rec.shape.clone(), data)?;
    }
    Ok((manifest, model))
}
