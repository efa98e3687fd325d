//! Named parameter tensors with per-group trainable flags, plus the
//! little-endian archive format used by checkpoints.

use std::collections::HashMap;
use std::io::{Read, Write};

use super::Mat;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub group: String,
    pub trainable: bool,
    pub value: Mat,
}

/// Ordered collection of parameters; order is the update/serialization order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, group: &str, trainable: bool, value: Mat) -> usize {
        let idx = self.params.len();
        self.index.insert(name.to_string(), idx);
        self.params.push(Param {
            name: name.to_string(),
            group: group.to_string(),
            trainable,
            value,
        });
        idx
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        let i = *self.index.get(name)?;
        Some(&mut self.params[i])
    }

    /// Total scalar count, optionally restricted to trainable parameters.
    pub fn scalar_count(&self, trainable_only: bool) -> usize {
        self.params
            .iter()
            .filter(|p| !trainable_only || p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Sets the trainable flag of every parameter in `group`.
    pub fn set_group_trainable(&mut self, group: &str, trainable: bool) {
        for p in self.params.iter_mut() {
            if p.group == group {
                p.trainable = trainable;
            }
        }
    }

    /// FNV-1a hash over the raw bytes of every parameter in `group`;
    /// used to assert bit-identity of frozen groups across training phases.
    pub fn group_hash(&self, group: &str) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in self.params.iter().filter(|p| p.group == group) {
            for v in p.value.data() {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

// ---- binary archive helpers ----

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, what)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, what)?;
    Ok(f64::from_le_bytes(buf))
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated(what.to_string())
        } else {
            Error::Io(e)
        }
    })
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let len = read_u32(r, what)? as usize;
    if len > 1 << 20 {
        return Err(Error::Parse(format!("{what}: implausible string length {len}")));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf, what)?;
    String::from_utf8(buf).map_err(|_| Error::Parse(format!("{what}: invalid utf-8")))
}

/// Writes a named-tensor archive: count, then per tensor name, group,
/// trainable flag, shape, and row-major f64 little-endian payload.
pub fn write_archive<W: Write>(w: &mut W, store: &ParamStore) -> Result<()> {
    write_u32(w, store.len() as u32)?;
    for p in store.iter() {
        write_str(w, &p.name)?;
        write_str(w, &p.group)?;
        w.write_all(&[p.trainable as u8])?;
        write_u32(w, p.value.rows() as u32)?;
        write_u32(w, p.value.cols() as u32)?;
        for v in p.value.data() {
            write_f64(w, *v)?;
        }
    }
    Ok(())
}

pub fn read_archive<R: Read>(r: &mut R) -> Result<ParamStore> {
    let count = read_u32(r, "tensor count")? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = read_str(r, "tensor name")?;
        let group = read_str(r, "tensor group")?;
        let mut flag = [0u8; 1];
        read_exact(r, &mut flag, "trainable flag")?;
        let rows = read_u32(r, "tensor rows")? as usize;
        let cols = read_u32(r, "tensor cols")? as usize;
        let mut data = vec![0.0; rows * cols];
        for v in data.iter_mut() {
            *v = read_f64(r, "tensor data")?;
        }
        let value = Mat::from_vec(rows, cols, data)?;
        store.insert(&name, &group, flag[0] != 0, value);
    }
    Ok(store)
}
