//! Single-file checkpoint: a JSON manifest (spec, vocabulary, seed, best
//! validation F1, parameter names and shapes) followed by the parameter
//! values as raw little-endian f32 arrays in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, Param, ParamSet};
use super::vocab::Vocab;
use super::BackboneSpec;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"FINPTCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Everything needed to reload a trained model and know how it was selected.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: BackboneSpec,
    pub max_len: usize,
    pub seed: u64,
    pub best_val_f1: f64,
    pub vocab: Vec<String>,
    pub params: Vec<CheckpointParam>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    spec: BackboneSpec,
    max_len: usize,
    seed: u64,
    best_val_f1: f64,
    vocab: Vec<String>,
    params: Vec<ManifestParam>,
}

#[derive(Serialize, Deserialize)]
struct ManifestParam {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, seed: u64, best_val_f1: f64) -> Self {
        let params = model
            .params()
            .iter()
            .map(|p| CheckpointParam {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.data.iter().map(|&v| v as f32).collect(),
            })
            .collect();
        Self {
            spec: *model.spec(),
            max_len: model.max_len(),
            seed,
            best_val_f1,
            vocab: model.vocab().tokens().to_vec(),
            params,
        }
    }

    /// Rebuilds the model, widening stored f32 values back to f64.
    pub fn to_model(&self) -> Result<Model> {
        let vocab = Vocab::from_tokens(self.vocab.clone())?;
        let params: Vec<Param> = self
            .params
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.data.iter().map(|&v| v as f64).collect(),
            })
            .collect();
        Model::from_params(self.spec, vocab, self.max_len, ParamSet::from_params(params))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let manifest = Manifest {
            spec: self.spec,
            max_len: self.max_len,
            seed: self.seed,
            best_val_f1: self.best_val_f1,
            vocab: self.vocab.clone(),
            params: self
                .params
                .iter()
                .map(|p| ManifestParam { name: p.name.clone(), shape: p.shape.clone() })
                .collect(),
        };
        let manifest_bytes = serde_json::to_vec(&manifest)?;
        let mut file = fs::File::create(path)?;
        file.write_all(MAGIC)?;
        file.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&manifest_bytes)?;
        for p in &self.params {
            let mut bytes = Vec::with_capacity(p.data.len() * 4);
            for v in &p.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            file.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)
            .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
        let manifest_len = u64::from_le_bytes(len_bytes) as usize;
        let mut manifest_bytes = vec![0u8; manifest_len];
        file.read_exact(&mut manifest_bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated manifest: {e}")))?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;

        let mut params = Vec::with_capacity(manifest.params.len());
        for mp in manifest.params {
            let len: usize = mp.shape.iter().product();
            let mut bytes = vec![0u8; len * 4];
            file.read_exact(&mut bytes).map_err(|e| {
                Error::Checkpoint(format!("truncated data for parameter {}: {e}", mp.name))
            })?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push(CheckpointParam { name: mp.name, shape: mp.shape, data });
        }
        let mut rest = Vec::new();
        file.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self {
            spec: manifest.spec,
            max_len: manifest.max_len,
            seed: manifest.seed,
            best_val_f1: manifest.best_val_f1,
            vocab: manifest.vocab,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{Arch, BackboneSpec, TrainablePolicy};

    fn sample_model() -> Model {
        let vocab = Vocab::build(["alpha beta gamma delta"]);
        let spec = BackboneSpec {
            arch: Arch::Decoder,
            hidden_dim: 8,
            layers: 2,
            heads: 2,
            vocab_size: 0,
            trainable_policy: TrainablePolicy::LastBlock,
        };
        Model::init(spec, vocab, 12, 5).unwrap()
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let model = sample_model();
        let ckpt = Checkpoint::from_model(&model, 42, 0.875);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);

        let rebuilt = loaded.to_model().unwrap();
        assert_eq!(rebuilt.spec(), model.spec());
        assert_eq!(rebuilt.max_len(), model.max_len());
        assert_eq!(rebuilt.vocab().tokens(), model.vocab().tokens());
        // f64 -> f32 -> f64 is the only change.
        for (a, b) in rebuilt.params().iter().zip(model.params().iter()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }

    #[test]
    fn save_is_byte_deterministic() {
        let model = sample_model();
        let ckpt = Checkpoint::from_model(&model, 1, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        ckpt.save(&a).unwrap();
        ckpt.save(&b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
