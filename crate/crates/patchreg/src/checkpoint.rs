//! Checkpoint container.
//!
//! ```text
//! "PRCK"  u32 version
//! u32 config_len, config JSON (ModelConfig)
//! u32 n_params, then per parameter:
//!     u32 name_len, name, u32 ndim, u32 dims[ndim], f32 values[numel]
//! 32-byte SHA-256 of everything above
//! ```
//!
//! All integers and values are little-endian.

use std::fs;
use std::path::Path;

use patchreg_core::{Model, ModelConfig, Real};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"PRCK";
pub const VERSION: u32 = 1;
const HASH_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct StoredParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<StoredParam>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &Model<T>) -> Self {
        Checkpoint {
            config: model.config().clone(),
            params: model
                .params
                .iter()
                .map(|(_, p)| StoredParam {
                    name: p.name.clone(),
                    shape: p.shape.dims().to_vec(),
                    values: p.data.iter().map(|v| v.f64() as f32).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model from the stored config and overwrites every
    /// parameter with the stored values.
    pub fn to_model<T: Real>(&self) -> std::result::Result<Model<T>, String> {
        let mut model = Model::<T>::new(&self.config).map_err(|e| e.to_string())?;
        if model.params.len() != self.params.len() {
            return Err(format!(
                "config builds {} parameters, checkpoint holds {}",
                model.params.len(),
                self.params.len()
            ));
        }
        for sp in &self.params {
            let id = model
                .params
                .find(&sp.name)
                .ok_or_else(|| format!("unknown parameter {}", sp.name))?;
            let p = model.params.get_mut(id);
            if p.shape.dims() != sp.shape.as_slice() {
                return Err(format!(
                    "{}: stored shape {:?}, model expects {:?}",
                    sp.name,
                    sp.shape,
                    p.shape.dims()
                ));
            }
            for (d, &v) in p.data.iter_mut().zip(&sp.values) {
                *d = T::of(v as f64);
            }
        }
        Ok(model)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config = serde_json::to_vec(&self.config).expect("config serialises");
        put_u32(&mut out, config.len());
        out.extend_from_slice(&config);
        put_u32(&mut out, self.params.len());
        for p in &self.params {
            put_u32(&mut out, p.name.len());
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, p.shape.len());
            for &d in &p.shape {
                put_u32(&mut out, d);
            }
            for v in &p.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let hash = Sha256::digest(&out);
        out.extend_from_slice(&hash);
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 4 + 4 + HASH_LEN || &bytes[..4] != MAGIC {
            return Err("not a checkpoint (missing PRCK magic)".into());
        }
        let (body, hash) = bytes.split_at(bytes.len() - HASH_LEN);
        if Sha256::digest(body).as_slice() != hash {
            return Err("content hash mismatch".into());
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let len = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(len)?).map_err(|e| format!("config: {e}"))?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name =
                String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "parameter name is not UTF-8".to_string())?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or("parameter too large")?)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.push(StoredParam { name, shape, values });
        }
        if r.pos != body.len() {
            return Err(format!("{} trailing bytes before the hash", body.len() - r.pos));
        }
        Ok(Checkpoint { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Checkpoint::decode(&bytes).map_err(|d| CliError::integrity(path, d))
    }
}

/// Loads a checkpoint straight into a model.
pub fn load_model<T: Real>(path: &Path) -> Result<Model<T>> {
    Checkpoint::load(path)?
        .to_model()
        .map_err(|d| CliError::integrity(path, d))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
