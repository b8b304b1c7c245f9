//! Flat binary displacement fields: `"PRGF"`, u32 height, u32 width, u32
//! dtype code, then the x channel and the y channel row-major, all
//! little-endian.

use std::fs;
use std::path::Path;

use patchreg_core::{FieldKind, Real, VectorField};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"PRGF";
pub const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn encode<T: Real>(field: &VectorField<T>, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + field.data.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(field.height as u32).to_le_bytes());
    out.extend_from_slice(&(field.width as u32).to_le_bytes());
    out.extend_from_slice(&(dtype as u32).to_le_bytes());
    for &v in &field.data {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v.f64() as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.f64().to_le_bytes()),
        }
    }
    out
}

/// Decodes as a displacement field.
pub fn decode(bytes: &[u8]) -> std::result::Result<(VectorField<f64>, Dtype), String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err("missing PRGF magic".into());
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("4 bytes"));
    let (h, w) = (word(4) as usize, word(8) as usize);
    let dtype = match word(12) {
        0 => Dtype::F32,
        1 => Dtype::F64,
        c => return Err(format!("unknown dtype code {c}")),
    };
    let n = 2 * h * w;
    let body = &bytes[HEADER_LEN..];
    if body.len() != n * dtype.width() {
        return Err(format!(
            "{h}x{w} field needs {} payload bytes, found {}",
            n * dtype.width(),
            body.len()
        ));
    }
    let data = match dtype {
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let field = VectorField::new(h, w, FieldKind::Displacement, data).map_err(|e| e.to_string())?;
    Ok((field, dtype))
}

pub fn write_field<T: Real>(field: &VectorField<T>, dtype: Dtype, path: &Path) -> Result<()> {
    fs::write(path, encode(field, dtype)).map_err(|e| CliError::io(path, e))
}

pub fn read_field(path: &Path) -> Result<VectorField<f64>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map(|(f, _)| f).map_err(|d| CliError::integrity(path, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_round_trip() {
        let f = VectorField::<f64>::from_fn(2, 3, FieldKind::Displacement, |i, j| (j as f64, -(i as f64) - 0.5));
        let b = encode(&f, Dtype::F64);
        assert_eq!(&b[..4], b"PRGF");
        assert_eq!(&b[4..16], &[2, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(f64::from_le_bytes(b[16 + 8..16 + 16].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(b[16 + 6 * 8..16 + 7 * 8].try_into().unwrap()), -0.5);
        assert_eq!(decode(&b).unwrap(), (f.clone(), Dtype::F64));
        let (g, d) = decode(&encode(&f, Dtype::F32)).unwrap();
        assert_eq!((g, d), (f, Dtype::F32));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode(b"PRGF").is_err());
        let mut b = encode(&VectorField::<f64>::zeros(2, 2, FieldKind::Displacement), Dtype::F32);
        b.pop();
        assert!(decode(&b).unwrap_err().contains("payload"));
        b[12] = 9;
        assert!(decode(&b).unwrap_err().contains("dtype"));
    }
}
