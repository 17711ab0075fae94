//! `PSTG1` checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PSTG1"
//! u64 optimizer step count
//! u32 metadata entry count, then per entry: u32 len, key bytes, u32 len, value bytes
//! u32 parameter count, then per parameter (sorted by name):
//!     u32 len, name bytes
//!     u32 rank, rank × u64 extents
//!     numel × f64 value, numel × f64 first moment, numel × f64 second moment
//! ```

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use super::params::{ParamStore, Slot};
use super::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"PSTG1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic header: expected PSTG1")]
    BadMagic,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Parameters, optimiser state and free-form string metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(params: &ParamStore<T>, metadata: BTreeMap<String, String>) -> Self {
        Self {
            params: params.cast(),
            metadata,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&self.params.step().to_le_bytes())?;
        w.write_all(&(self.metadata.len() as u32).to_le_bytes())?;
        for (k, v) in &self.metadata {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, slot) in self.params.slots() {
            write_str(w, name)?;
            write_shape(w, slot.value.shape())?;
            for t in [&slot.value, &slot.m, &slot.v] {
                write_f64s(w, t.data())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let step = read_u64(r)?;
        let n_meta = read_u32(r)?;
        let mut metadata = BTreeMap::new();
        for _ in 0..n_meta {
            let k = read_str(r)?;
            let v = read_str(r)?;
            metadata.insert(k, v);
        }
        let n_params = read_u32(r)?;
        let mut params = ParamStore::new();
        for _ in 0..n_params {
            let name = read_str(r)?;
            let shape = read_shape(r)?;
            let numel: usize = shape.iter().product();
            let mut tensors = Vec::with_capacity(3);
            for _ in 0..3 {
                let data = read_f64s(r, numel)?;
                tensors.push(Tensor::new(shape.clone(), data).map_err(|e| CheckpointError::Malformed(e.to_string()))?);
            }
            let v = tensors.pop().unwrap();
            let m = tensors.pop().unwrap();
            let value = tensors.pop().unwrap();
            params.insert_slot(name, Slot { value, m, v });
        }
        params.set_step(step);
        Ok(Self { params, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

/// Writes a list of named tensors (no optimiser state) under a custom magic.
/// Used for attention-matrix sidecars.
pub fn write_tensor_list<W: Write, T: Scalar>(w: &mut W, magic: &[u8], tensors: &[(String, Tensor<T>)]) -> io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        write_str(w, name)?;
        write_shape(w, t.shape())?;
        let data: Vec<f64> = t.to_f64_vec();
        write_f64s(w, &data)?;
    }
    Ok(())
}

pub fn read_tensor_list<R: Read>(r: &mut R, magic: &[u8]) -> Result<Vec<(String, Tensor<f64>)>, CheckpointError> {
    let mut got = vec![0u8; magic.len()];
    r.read_exact(&mut got)?;
    if got != magic {
        return Err(CheckpointError::BadMagic);
    }
    let n = read_u32(r)?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let name = read_str(r)?;
        let shape = read_shape(r)?;
        let data = read_f64s(r, shape.iter().product())?;
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn write_shape<W: Write>(w: &mut W, shape: &[usize]) -> io::Result<()> {
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &e in shape {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    Ok(())
}

fn write_f64s<W: Write, T: Scalar>(w: &mut W, data: &[T]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, CheckpointError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 24 {
        return Err(CheckpointError::Malformed(format!("string length {len} too large")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

fn read_shape<R: Read>(r: &mut R) -> Result<Vec<usize>, CheckpointError> {
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(CheckpointError::Malformed(format!("rank {rank} too large")));
    }
    (0..rank).map(|_| read_u64(r).map(|e| e as usize)).collect()
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, CheckpointError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{AdamW, Gradients};

    #[test]
    fn round_trip_preserves_state() {
        let mut p = ParamStore::<f64>::new();
        p.insert("a.weight", Tensor::from_f64(&[2, 2], &[1.0, -2.0, 3.5, 0.25]).unwrap());
        p.insert("b", Tensor::from_f64(&[1], &[7.0]).unwrap());
        let mut g = Gradients::new();
        g.insert("a.weight".into(), Tensor::full(&[2, 2], 0.1));
        g.insert("b".into(), Tensor::full(&[1], -0.3));
        p.adamw_step(&g, &AdamW::default()).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("note".to_string(), "x=1".to_string());
        let ck = Checkpoint::new(&p, meta);
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..5], b"PSTG1");
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params.step(), 1);
    }

    #[test]
    fn rejects_bad_magic() {
        let err = Checkpoint::read_from(&mut b"XXXXX\0\0\0\0".as_slice()).unwrap_err();
        assert!(matches!(err, CheckpointError::BadMagic));
    }
}
