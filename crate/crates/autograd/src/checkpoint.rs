//! On-disk checkpoints.
//!
//! A checkpoint is a directory holding `manifest.json` and `params.bin`. The
//! binary file is every parameter's values as little-endian `f64`, concatenated
//! in sorted-path order; the manifest records each path's shape and offset
//! together with the run's epoch, seeds and hyperparameters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
const FORMAT: &str = "masa-checkpoint-v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub epoch: usize,
    pub seeds: BTreeMap<String, u64>,
    pub hyperparameters: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    epoch: usize,
    seeds: BTreeMap<String, u64>,
    hyperparameters: serde_json::Value,
    data_file: String,
    total_values: usize,
    params: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    shape: Vec<usize>,
    offset: usize,
}

impl Checkpoint {
    pub fn new(params: ParamStore) -> Self {
        Self {
            params,
            epoch: 0,
            seeds: BTreeMap::new(),
            hyperparameters: serde_json::Value::Null,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.params.len());
        let mut bytes = Vec::with_capacity(self.params.num_scalars() * 8);
        let mut offset = 0;
        for (path, p) in self.params.iter() {
            entries.push(ManifestEntry {
                path: path.to_string(),
                shape: p.value.shape().to_vec(),
                offset,
            });
            for v in p.value.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            offset += p.value.len();
        }
        let manifest = Manifest {
            format: FORMAT.to_string(),
            epoch: self.epoch,
            seeds: self.seeds.clone(),
            hyperparameters: self.hyperparameters.clone(),
            data_file: PARAMS_FILE.to_string(),
            total_values: offset,
            params: entries,
        };
        let mut json = serde_json::to_string_pretty(&manifest)?;
        json.push('\n');
        fs::write(dir.join(MANIFEST_FILE), json)?;
        fs::write(dir.join(PARAMS_FILE), bytes)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let bad = |reason: String| Error::Checkpoint {
            path: dir.to_path_buf(),
            reason,
        };
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        if manifest.format != FORMAT {
            return Err(bad(format!("unsupported format `{}`", manifest.format)));
        }
        let bytes = fs::read(dir.join(&manifest.data_file))?;
        if bytes.len() != manifest.total_values * 8 {
            return Err(bad(format!(
                "{} bytes of data for {} values",
                bytes.len(),
                manifest.total_values
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut params = ParamStore::new();
        for e in manifest.params {
            let len: usize = e.shape.iter().product();
            let end = e.offset + len;
            if end > values.len() {
                return Err(bad(format!("`{}` runs past the end of the data", e.path)));
            }
            params.insert(e.path, Tensor::new(e.shape, values[e.offset..end].to_vec())?)?;
        }
        Ok(Self {
            params,
            epoch: manifest.epoch,
            seeds: manifest.seeds,
            hyperparameters: manifest.hyperparameters,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_is_exact() {
        let mut params = ParamStore::new();
        params.insert("b.w", Tensor::matrix(2, 2, vec![0.1, -3e-300, f64::MAX, 7.0]).unwrap()).unwrap();
        params.insert("a", Tensor::scalar(-0.0)).unwrap();
        let mut ckpt = Checkpoint::new(params);
        ckpt.epoch = 12;
        ckpt.seeds.insert("seed".into(), 99);
        ckpt.hyperparameters = serde_json::json!({"lr": 1e-4});
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ckpt);
        // sorted-path layout: `a` first
        let raw = fs::read(dir.path().join(PARAMS_FILE)).unwrap();
        assert_eq!(&raw[..8], &(-0.0f64).to_le_bytes());
        assert_eq!(raw.len(), 5 * 8);
    }

    #[test]
    fn truncated_data_rejected() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::row(&[1.0, 2.0])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        Checkpoint::new(params).save(dir.path()).unwrap();
        fs::write(dir.path().join(PARAMS_FILE), [0u8; 8]).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Checkpoint { .. })));
    }
}
