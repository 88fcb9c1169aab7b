//! Named-tensor archive: a versioned binary container of `(name, shape,
//! f32 block)` records plus a free-form JSON metadata string.
//!
//! Layout (little endian): magic `TSNA`, `u32` version, `u32` metadata
//! length, metadata bytes, `u32` tensor count, then per tensor `u32` name
//! length, name bytes, `u32` rank, `u64` dims, `f32` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::params::{ParamSet, Parameter};
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"TSNA";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Archive {
    pub metadata: String,
    pub tensors: Vec<NamedTensor>,
}

impl Archive {
    pub fn from_params(params: &ParamSet<f32>, metadata: impl Into<String>) -> Self {
        Archive {
            metadata: metadata.into(),
            tensors: params
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    values: p.value.clone(),
                })
                .collect(),
        }
    }

    pub fn into_params(self) -> ParamSet<f32> {
        let mut set = ParamSet::new();
        for t in self.tensors {
            set.push(Parameter::new(t.name, t.shape, t.values));
        }
        set
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != ARCHIVE_MAGIC {
            return Err(Error::Format("not a tensor archive (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != ARCHIVE_VERSION {
            return Err(Error::Version {
                what: "tensor archive".into(),
                found: version,
                expected: ARCHIVE_VERSION,
            });
        }
        let meta_len = read_u32(&mut r)? as usize;
        let metadata = read_string(&mut r, meta_len)?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = read_string(&mut r, name_len)?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            if r.len() < n * 4 {
                return Err(Error::Format(format!("tensor {name} truncated")));
            }
            let values = r[..n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            r = &r[n * 4..];
            tensors.push(NamedTensor { name, shape, values });
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in tensor archive", r.len())));
        }
        Ok(Archive { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("tensor archive truncated".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string(r: &mut &[u8], len: usize) -> Result<String> {
    if r.len() < len {
        return Err(Error::Format("tensor archive truncated".into()));
    }
    let s = std::str::from_utf8(&r[..len])
        .map_err(|_| Error::Format("tensor archive string is not UTF-8".into()))?
        .to_string();
    *r = &r[len..];
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        Archive {
            metadata: r#"{"kind":"test"}"#.into(),
            tensors: vec![
                NamedTensor {
                    name: "a.weight".into(),
                    shape: vec![2, 3],
                    values: vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, 7.0],
                },
                NamedTensor {
                    name: "a.bias".into(),
                    shape: vec![3],
                    values: vec![0.1, 0.2, 0.3],
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let a = sample();
        let b = Archive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn future_version_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[4..8].copy_from_slice(&(ARCHIVE_VERSION + 1).to_le_bytes());
        match Archive::from_bytes(&bytes) {
            Err(Error::Version { found, .. }) => assert_eq!(found, ARCHIVE_VERSION + 1),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample().to_bytes();
        assert!(Archive::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
