//! Float-block store: `<name>.f32` holds little-endian `f32` values and
//! `<name>.manifest.json` describes them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STORE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockManifest {
    pub format_version: u32,
    pub kind: String,
    pub count: usize,
    pub dim: usize,
    pub ids: Vec<String>,
    /// Rows per item for ragged blocks (feature sequences); absent when
    /// every item is a single row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

/// A set of `count` items, each one row (or `lengths[i]` rows) of `dim` floats.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatBlock {
    pub kind: String,
    pub dim: usize,
    pub ids: Vec<String>,
    pub lengths: Option<Vec<usize>>,
    pub values: Vec<f32>,
    pub extra: serde_json::Value,
}

pub fn block_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.f32")), dir.join(format!("{name}.manifest.json")))
}

impl FloatBlock {
    pub fn dense(kind: impl Into<String>, ids: Vec<String>, dim: usize, values: Vec<f32>) -> Result<Self> {
        let b = FloatBlock {
            kind: kind.into(),
            dim,
            ids,
            lengths: None,
            values,
            extra: serde_json::Value::Null,
        };
        b.check()?;
        Ok(b)
    }

    pub fn ragged(
        kind: impl Into<String>,
        ids: Vec<String>,
        dim: usize,
        lengths: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let b = FloatBlock {
            kind: kind.into(),
            dim,
            ids,
            lengths: Some(lengths),
            values,
            extra: serde_json::Value::Null,
        };
        b.check()?;
        Ok(b)
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    fn expected_values(&self) -> Result<usize> {
        let rows = match &self.lengths {
            Some(l) if l.len() != self.ids.len() => {
                return Err(Error::Format(format!(
                    "{} lengths for {} items",
                    l.len(),
                    self.ids.len()
                )))
            }
            Some(l) => l.iter().sum(),
            None => self.ids.len(),
        };
        Ok(rows * self.dim)
    }

    fn check(&self) -> Result<()> {
        let want = self.expected_values()?;
        if want != self.values.len() {
            return Err(Error::Format(format!(
                "{} block: manifest implies {want} values but block holds {}",
                self.kind,
                self.values.len()
            )));
        }
        Ok(())
    }

    /// Rows of item `i`, as a flat slice.
    pub fn item(&self, i: usize) -> &[f32] {
        match &self.lengths {
            None => &self.values[i * self.dim..(i + 1) * self.dim],
            Some(l) => {
                let start: usize = l[..i].iter().sum();
                &self.values[start * self.dim..(start + l[i]) * self.dim]
            }
        }
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        self.check()?;
        let (data, manifest) = block_paths(dir, name);
        let m = BlockManifest {
            format_version: STORE_VERSION,
            kind: self.kind.clone(),
            count: self.ids.len(),
            dim: self.dim,
            ids: self.ids.clone(),
            lengths: self.lengths.clone(),
            extra: self.extra.clone(),
        };
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&data, bytes).map_err(|e| Error::io(&data, e))?;
        let json = serde_json::to_string_pretty(&m).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&manifest, json).map_err(|e| Error::io(&manifest, e))
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let (data, manifest) = block_paths(dir, name);
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let m: BlockManifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", manifest.display())))?;
        if m.format_version != STORE_VERSION {
            return Err(Error::Version {
                what: manifest.display().to_string(),
                found: m.format_version,
                expected: STORE_VERSION,
            });
        }
        if m.count != m.ids.len() {
            return Err(Error::Format(format!(
                "{}: count {} but {} ids",
                manifest.display(),
                m.count,
                m.ids.len()
            )));
        }
        let bytes = fs::read(&data).map_err(|e| Error::io(&data, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Format(format!("{}: size not a multiple of 4", data.display())));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let b = FloatBlock {
            kind: m.kind,
            dim: m.dim,
            ids: m.ids,
            lengths: m.lengths,
            values,
            extra: m.extra,
        };
        b.check()?;
        Ok(b)
    }
}
