//! Parameter archives: one tensor file per parameter plus `index.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;
use crate::tensorfile::{self, TensorData};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IndexEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointIndex {
    pub params: Vec<IndexEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NnError + '_ {
    move |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save(store: &ParameterStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut params = Vec::with_capacity(store.len());
    for (id, p) in store.iter() {
        let file = format!("param_{:04}.rft", id.index());
        tensorfile::write(
            &dir.join(&file),
            p.value.shape(),
            &TensorData::F64(p.value.data().to_vec()),
        )?;
        params.push(IndexEntry {
            name: p.name.clone(),
            file,
            shape: p.value.shape().to_vec(),
            step: p.step,
        });
    }
    let index = CheckpointIndex { params };
    let path = dir.join("index.json");
    let json = serde_json::to_string_pretty(&index).expect("index serialises");
    fs::write(&path, json).map_err(io_err(&path))
}

pub fn load(dir: &Path) -> Result<ParameterStore> {
    let path = dir.join("index.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let index: CheckpointIndex = serde_json::from_str(&text).map_err(|e| NnError::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let mut store = ParameterStore::new();
    for entry in index.params {
        let file = dir.join(&entry.file);
        let (dims, data) = tensorfile::read(&file)?;
        let values = match data {
            TensorData::F64(v) => v,
            TensorData::F32(v) => v.into_iter().map(f64::from).collect(),
        };
        if dims != entry.shape {
            return Err(NnError::Format {
                path: file,
                reason: format!("shape {:?} disagrees with index {:?}", dims, entry.shape),
            });
        }
        let id = store.add(entry.name, Tensor::new(dims, values)?)?;
        store.get_mut(id).step = entry.step;
    }
    Ok(store)
}

/// Copies values from `source` into same-named parameters of `target`.
pub fn restore_into(target: &mut ParameterStore, source: &ParameterStore) -> Result<()> {
    for (_, p) in source.iter() {
        let id = target
            .id(&p.name)
            .ok_or_else(|| NnError::Contract(format!("checkpoint parameter {} unknown to model", p.name)))?;
        let dst = target.get_mut(id);
        if dst.value.shape() != p.value.shape() {
            return Err(NnError::Shape {
                what: p.name.clone(),
                expected: dst.value.shape().to_vec(),
                got: p.value.shape().to_vec(),
            });
        }
        dst.value = p.value.clone();
        dst.step = p.step;
    }
    Ok(())
}
