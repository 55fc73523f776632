//! Parameter checkpoints: a directory holding `params.bin` (all tensors as
//! little-endian f64, in store order) and `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    /// SHA-256 of the model description the tensors belong to.
    pub spec_hash: String,
    /// SHA-256 of `params.bin`.
    pub data_hash: String,
    pub model: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_params(store: &ParamStore) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(store.scalar_count() * 8);
    for t in store.tensors() {
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn save_checkpoint(dir: &Path, store: &ParamStore, seed: u64, model: &serde_json::Value) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let bytes = encode_params(store);
    let manifest = Manifest {
        seed,
        spec_hash: sha256_hex(serde_json::to_string(model)?.as_bytes()),
        data_hash: sha256_hex(&bytes),
        model: model.clone(),
        tensors: store
            .ids()
            .map(|id| {
                let t = store.get(id);
                TensorEntry {
                    name: store.name(id).to_string(),
                    shape: [t.rows, t.cols],
                }
            })
            .collect(),
    };
    fs::write(dir.join(PARAMS_FILE), &bytes)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(ParamStore, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    if sha256_hex(&bytes) != manifest.data_hash {
        return Err(Error::Checkpoint("params.bin does not match the manifest hash".into()));
    }
    if sha256_hex(serde_json::to_string(&manifest.model)?.as_bytes()) != manifest.spec_hash {
        return Err(Error::Checkpoint("model description does not match the spec hash".into()));
    }
    let expected: usize = manifest.tensors.iter().map(|t| t.shape[0] * t.shape[1] * 8).sum();
    if expected != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "expected {expected} bytes of parameters, found {}",
            bytes.len()
        )));
    }
    let mut store = ParamStore::new();
    let mut chunks = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for entry in &manifest.tensors {
        let [rows, cols] = entry.shape;
        let data: Vec<f64> = chunks.by_ref().take(rows * cols).collect();
        store.add(&entry.name, Tensor2::from_vec(rows, cols, data)?)?;
    }
    Ok((store, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        store.add_uniform("a.w", 3, 5, 3, &mut rng).unwrap();
        store.add_uniform("a.b", 1, 5, 3, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let model = serde_json::json!({"kind": "test", "hidden": 5});
        let saved = save_checkpoint(dir.path(), &store, 4, &model).unwrap();
        let (back, manifest) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, store);
        assert_eq!(manifest, saved);
        assert_eq!(
            manifest.tensors[1],
            TensorEntry {
                name: "a.b".into(),
                shape: [1, 5]
            }
        );
    }

    #[test]
    fn corrupted_data_is_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor2::filled(2, 2, 1.5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &store, 0, &serde_json::json!({})).unwrap();
        let path = dir.path().join(PARAMS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
    }
}
