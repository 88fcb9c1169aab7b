use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trajsim_core::{Error, Result};

/// Written by every stage next to its artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub inputs: Vec<String>,
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub summary: serde_json::Value,
}

pub fn path_for(dir: &Path, stage: &str) -> PathBuf {
    dir.join(format!("{stage}.stage.json"))
}

impl Manifest {
    pub fn new(stage: &str, config_hash: &str) -> Self {
        Manifest {
            stage: stage.into(),
            config_hash: config_hash.into(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = path_for(dir, &self.stage);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path, stage: &str) -> Result<Self> {
        let path = path_for(dir, stage);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Loads the manifest of an upstream stage, or names the command that
/// produces it. A different config hash is only reported.
pub fn require(dir: &Path, stage: &str, config_hash: &str) -> Result<Manifest> {
    let path = path_for(dir, stage);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path,
            command: format!("trajsim {stage}"),
        });
    }
    let m = Manifest::read(dir, stage)?;
    for a in &m.artifacts {
        if !dir.join(a).exists() {
            return Err(Error::MissingArtifact {
                path: dir.join(a),
                command: format!("trajsim {stage}"),
            });
        }
    }
    if m.config_hash != config_hash {
        log::warn!("{stage} artifacts were produced with config {} (current {config_hash})", m.config_hash);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let e = require(dir.path(), "pretrain", "abc").unwrap_err();
        assert!(e.to_string().contains("trajsim pretrain"), "{e}");

        let mut m = Manifest::new("pretrain", "abc");
        m.artifacts.push("encoder.ckpt".into());
        m.write(dir.path()).unwrap();
        assert_eq!(Manifest::read(dir.path(), "pretrain").unwrap(), m);
        assert!(matches!(require(dir.path(), "pretrain", "abc"), Err(Error::MissingArtifact { .. })));
        std::fs::write(dir.path().join("encoder.ckpt"), b"x").unwrap();
        assert!(require(dir.path(), "pretrain", "other").is_ok());
    }
}
