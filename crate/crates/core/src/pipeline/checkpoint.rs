//! Binary checkpoint format.
//!
//! Layout (little-endian): `"TOFW"`, `u32` version, `u32` tensor count, then
//! per tensor `u16` name length, UTF-8 name, `u8` rank, `u32` extents and
//! `f32` values.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TOFW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Named `f32` tensors in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelCheckpoint {
    pub tensors: Vec<NamedTensor>,
}

impl ModelCheckpoint {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    /// UTF-8 text stored one byte per value.
    pub fn push_text(&mut self, name: &str, text: &str) {
        let bytes: Vec<f32> = text.bytes().map(f32::from).collect();
        let n = bytes.len();
        self.push(name, &[n], bytes);
    }

    pub fn text(&self, name: &str) -> Result<Option<String>> {
        let Some(t) = self.get(name) else { return Ok(None) };
        let bytes = t
            .data
            .iter()
            .map(|v| {
                if v.fract() == 0.0 && (0.0..=255.0).contains(v) {
                    Ok(*v as u8)
                } else {
                    Err(Error::Format(format!("text tensor {name} holds non-byte value {v}")))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        String::from_utf8(bytes)
            .map(Some)
            .map_err(|e| Error::Format(format!("text tensor {name}: {e}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_unique()?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {}", t.name)))?;
            let rank = u8::try_from(t.shape.len()).map_err(|_| Error::Format(format!("tensor {} rank too high", t.name)))?;
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Shape(format!("tensor {} shape {:?} holds {} values", t.name, t.shape, t.data.len())));
            }
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(rank);
            for d in &t.shape {
                let d = u32::try_from(*d).map_err(|_| Error::Format(format!("tensor {} extent too large", t.name)))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("checkpoint magic is not TOFW".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let count = r.u32()? as usize;
        let mut ck = ModelCheckpoint::default();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::Format(format!("tensor name: {e}")))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format(format!("tensor {name} too large")))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            ck.tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
        }
        ck.check_unique()?;
        Ok(ck)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::Format(format!("duplicate tensor name {}", t.name)));
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
