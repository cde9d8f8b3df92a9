//! Single-file parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "CLABCKPT"
//! version      u32
//! sha256      32 bytes  over everything after this field
//! meta_len     u64
//! metadata     meta_len bytes of JSON
//! payload      f64 values of every tensor, in metadata order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::net::{EnsembleParams, NetConfig};
use crate::pcg_data::Location;
use crate::train::EpochRecord;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CLABCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 32 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    version: u32,
    run: RunConfig,
    net: NetConfig,
    seed: u64,
    location: Option<Location>,
    history: Vec<EpochRecord>,
    tensors: Vec<TensorEntry>,
}

/// Trained parameters plus everything needed to rerun or audit them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub params: EnsembleParams,
    pub seed: u64,
    /// Location the model was trained for; `None` for a pooled model.
    pub location: Option<Location>,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            version: CHECKPOINT_VERSION,
            run: self.run.clone(),
            net: self.params.config.clone(),
            seed: self.seed,
            location: self.location,
            history: self.history.clone(),
            tensors: self
                .params
                .store
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&meta)?;
        let mut body = Vec::with_capacity(8 + json.len() + 8 * self.params.store.num_values());
        body.extend_from_slice(&(json.len() as u64).to_le_bytes());
        body.extend_from_slice(&json);
        for p in self.params.store.iter() {
            for v in p.value.data() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&body));
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        if bytes.len() < HEADER_LEN {
            return Err(bad("checksum mismatch (file truncated)".into()));
        }
        let body = &bytes[44..];
        if Sha256::digest(body).as_slice() != &bytes[12..44] {
            return Err(bad("checksum mismatch".into()));
        }
        let meta_len = u64::from_le_bytes(body[..8].try_into().expect("8 bytes")) as usize;
        let json = body
            .get(8..8 + meta_len)
            .ok_or_else(|| bad("metadata length exceeds file".into()))?;
        let meta: Metadata = serde_json::from_slice(json)?;
        if meta.version != version {
            return Err(bad("header and metadata versions disagree".into()));
        }
        let mut params = EnsembleParams::init(&meta.net, 0)
            .map_err(|e| bad(format!("incompatible architecture: {e}")))?;
        if params.store.len() != meta.tensors.len() {
            return Err(bad(format!(
                "checkpoint holds {} tensors, architecture needs {}",
                meta.tensors.len(),
                params.store.len()
            )));
        }
        let mut payload = &body[8 + meta_len..];
        let ids: Vec<_> = params.store.ids().collect();
        for (id, entry) in ids.into_iter().zip(&meta.tensors) {
            let p = params.store.get_mut(id);
            if p.name != entry.name || p.value.shape() != entry.shape.as_slice() {
                return Err(bad(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    entry.name,
                    entry.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            let n = p.value.len() * 8;
            if payload.len() < n {
                return Err(bad("payload shorter than declared tensors".into()));
            }
            for (v, chunk) in p.value.data_mut().iter_mut().zip(payload[..n].chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            payload = &payload[n..];
        }
        if !payload.is_empty() {
            return Err(bad(format!("{} trailing payload bytes", payload.len())));
        }
        Ok(Checkpoint {
            run: meta.run,
            params,
            seed: meta.seed,
            location: meta.location,
            history: meta.history,
        })
    }

    /// Fails unless the stored architecture equals `expected`.
    pub fn require_net(&self, expected: &NetConfig) -> Result<()> {
        if &self.params.config != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint architecture {:?} (widths {:?}) differs from configured {:?} (widths {:?})",
                self.params.config.encoder,
                self.params.config.group_widths,
                expected.encoder,
                expected.group_widths
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
