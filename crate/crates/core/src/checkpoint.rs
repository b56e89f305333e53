//! Versioned model container.
//!
//! ```text
//! b"CONDIALC"  magic
//! u64 LE       header length in bytes
//! header       JSON: version, model config, vocabulary, tensor directory,
//!              seed, provenance
//! payload      tensors in directory order, row-major little-endian f64
//! ```
//!
//! Tensors are written sorted by name, so equal models give equal bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tensor};
use crate::sphred::{Model, ModelConfig};
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"CONDIALC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub best_epoch: usize,
    pub best_val_total: f64,
    pub epochs_run: usize,
    pub steps: usize,
    pub train_config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
    seed: u64,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub seed: u64,
    pub provenance: Provenance,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(model: &Model, params: ParamStore, vocab: Vocab, seed: u64, provenance: Provenance) -> Result<Self> {
        if vocab.len() != model.config.vocab_size {
            return Err(bad(format!(
                "vocabulary has {} tokens but the model expects {}",
                vocab.len(),
                model.config.vocab_size
            )));
        }
        let ck = Checkpoint {
            config: model.config.clone(),
            vocab,
            params,
            seed,
            provenance,
        };
        ck.model()?;
        Ok(ck)
    }

    /// Rebuilds the parameter handles and checks every tensor is present
    /// with its registered shape.
    pub fn model(&self) -> Result<Model> {
        let (model, fresh) = Model::build(self.config.clone())?;
        if fresh.len() != self.params.len() {
            return Err(bad(format!(
                "expected {} tensors, found {}",
                fresh.len(),
                self.params.len()
            )));
        }
        for (name, t) in fresh.sorted() {
            let id = self
                .params
                .id(name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            let have = self.params.get(id);
            if have.shape() != t.shape() || fresh.id(name).map(|i| i.index()) != Some(id.index()) {
                return Err(bad(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    have.shape(),
                    t.shape()
                )));
            }
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors: Vec<TensorEntry> = self
            .params
            .sorted()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect();
        let header = Header {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            tensors,
            seed: self.seed,
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let n_payload: usize = self.params.num_scalars();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * n_payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.sorted() {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..len])?;
        if header.version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {}",
                header.version
            )));
        }
        let vocab = Vocab::from_tokens(header.vocab)?;
        let (_, mut params) = Model::build(header.config.clone())?;
        let mut payload = &body[len..];
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            if payload.len() < 8 * n {
                return Err(bad(format!("truncated data for tensor {}", entry.name)));
            }
            let data = payload[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            payload = &payload[8 * n..];
            params.assign(&entry.name, Tensor::new(entry.shape.clone(), data)?)?;
        }
        if !payload.is_empty() {
            return Err(bad(format!("{} trailing bytes", payload.len())));
        }
        let names: Vec<&str> = header.tensors.iter().map(|e| e.name.as_str()).collect();
        let expected: Vec<&str> = params.sorted().map(|(n, _)| n).collect();
        if names != expected {
            return Err(bad("tensor directory does not match the model configuration"));
        }
        let ck = Checkpoint {
            config: header.config,
            vocab,
            params,
            seed: header.seed,
            provenance: header.provenance,
        };
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::RESERVED;
    use crate::sphred::Scenario;

    fn sample() -> Checkpoint {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(["a", "b", "c"].map(String::from));
        let vocab = Vocab::from_tokens(tokens).unwrap();
        let cfg = ModelConfig {
            embed_dim: 3,
            encoder_dim: 4,
            status_dim: 2,
            latent_dim: 2,
            label_dim: 3,
            decoder_dim: 3,
            mlp_dim: 4,
            ..ModelConfig::new(vocab.len(), Scenario::Sentiment)
        };
        let (m, s) = Model::init(cfg, 9).unwrap();
        let prov = Provenance {
            best_epoch: 3,
            best_val_total: 12.345678901234567,
            epochs_run: 5,
            steps: 40,
            train_config: Some(TrainConfig::default()),
        };
        Checkpoint::new(&m, s, vocab, 9, prov).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = sample();
        let a = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&a).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), a);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let a = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&a[..a.len() - 8]).is_err());
        let mut extra = a.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT00000000").is_err());
    }

    #[test]
    fn missing_tensor_is_rejected() {
        let ck = sample();
        let mut smaller = ck.clone();
        smaller.config.shared_status = true;
        assert!(smaller.model().is_err());
    }
}
