//! Checkpoint files: a JSON manifest next to a binary tensor payload.
//!
//! Payload layout, little-endian: magic "TGCK", u32 version, u64 tensor
//! count, then per tensor u64 rows, u64 cols and rows·cols f64 values, in
//! manifest order.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{init_params, ModelDims, ModelParams, ParamScope};
use crate::tensor::Matrix;
use crate::train::Mode;

pub const CHECKPOINT_FORMAT: &str = "tabglm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const PAYLOAD_MAGIC: &[u8; 4] = b"TGCK";

/// Trained parameters plus what is needed to use them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    pub dims: ModelDims,
    pub payload: String,
    pub tensors: Vec<TensorEntry>,
}

fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

impl Checkpoint {
    pub fn dims(&self) -> ModelDims {
        self.params.dims
    }

    pub fn manifest(&self, payload: &str) -> CheckpointManifest {
        CheckpointManifest {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            mode: self.mode,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            dims: self.params.dims,
            payload: payload.into(),
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, m)| TensorEntry {
                    name,
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
        }
    }

    /// Writes the manifest to `path` and the payload beside it with a
    /// `.bin` extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bin = payload_path(path);
        let payload_name = bin
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let manifest = self.manifest(&payload_name);
        std::fs::write(path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(path, e))?;

        let file = std::fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&bin, e);
        let tensors = self.params.tensors();
        w.write_all(PAYLOAD_MAGIC).map_err(io)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(tensors.len() as u64).to_le_bytes())
            .map_err(io)?;
        for (_, m) in tensors {
            w.write_all(&(m.rows() as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&(m.cols() as u64).to_le_bytes()).map_err(io)?;
            for v in m.data() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format `{}`",
                manifest.format
            )));
        }
        if manifest.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                manifest.version
            )));
        }
        let bin = path.with_file_name(&manifest.payload);
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let tensors = decode_payload(&bytes)?;

        let mut params = init_params(manifest.seed, manifest.dims)?;
        let expected = manifest.clone_with_entries(&params);
        if expected != manifest.tensors {
            return Err(Error::Checkpoint(
                "tensor table does not match the declared dims".into(),
            ));
        }
        let slots = params.tensors_mut(ParamScope::All);
        if slots.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "payload holds {} tensors, manifest declares {}",
                tensors.len(),
                slots.len()
            )));
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor shape {:?} does not match {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(Checkpoint {
            mode: manifest.mode,
            seed: manifest.seed,
            config_hash: manifest.config_hash,
            params,
        })
    }
}

impl CheckpointManifest {
    fn clone_with_entries(&self, params: &ModelParams) -> Vec<TensorEntry> {
        params
            .tensors()
            .into_iter()
            .map(|(name, m)| TensorEntry {
                name,
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect()
    }
}

fn decode_payload(bytes: &[u8]) -> Result<Vec<Matrix>> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 16 || &bytes[..4] != PAYLOAD_MAGIC {
        return Err(bad("payload: bad magic"));
    }
    let u64_at = |o: usize| -> Result<u64> {
        bytes
            .get(o..o + 8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .ok_or_else(|| bad("payload truncated"))
    };
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad("payload: unsupported version"));
    }
    let count = u64_at(8)? as usize;
    let mut off = 16;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = u64_at(off)? as usize;
        let cols = u64_at(off + 8)? as usize;
        off += 16;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| bad("payload: tensor too large"))?;
        let end = n
            .checked_mul(8)
            .and_then(|b| b.checked_add(off))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("payload truncated"))?;
        let data = bytes[off..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        off = end;
        out.push(Matrix::from_vec(rows, cols, data)?);
    }
    if off != bytes.len() {
        return Err(bad("payload has trailing bytes"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let ckpt = Checkpoint {
            mode: Mode::Full,
            seed: 108,
            config_hash: "abc".into(),
            params: init_params(108, ModelDims::new(3, 8, 2)).unwrap(),
        };
        ckpt.save(&path).unwrap();
        assert!(dir.path().join("model.bin").exists());
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn rejects_corrupt_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let ckpt = Checkpoint {
            mode: Mode::GraphOnly,
            seed: 1,
            config_hash: String::new(),
            params: init_params(1, ModelDims::new(2, 4, 2)).unwrap(),
        };
        ckpt.save(&path).unwrap();
        let bin = dir.path().join("model.bin");
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&bin, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
        bytes[0] = b'X';
        std::fs::write(&bin, &bytes).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
