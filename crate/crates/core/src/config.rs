//! Run configuration: TOML sections, dotted `key=value` overrides, range
//! validation, and a canonical hash recorded in every stage manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cellgraph::{SkipGramConfig, WalkConfig};
use crate::data::{Region, SynthConfig};
use crate::encoder::{AttentionMode, EncoderConfig};
use crate::error::{Error, Result};
use crate::measures::Measure;
use crate::moco::PretrainConfig;
use crate::movsem::FeatureSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Jsonl,
    Porto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    pub region: Region,
    pub synthetic_count: usize,
    pub synth: SynthConfig,
    pub sample_interval: f64,
    pub l_min: usize,
    pub l_max: usize,
    pub split: [f64; 3],
    /// Cap on the number of training trajectories used for pretraining.
    pub max_pretrain: Option<usize>,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synthetic,
            path: None,
            region: Region::PORTO,
            synthetic_count: 10_000,
            synth: SynthConfig::default(),
            sample_interval: 15.0,
            l_min: 20,
            l_max: 200,
            split: [0.7, 0.1, 0.2],
            max_pretrain: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellsSection {
    /// Grid cell edge in meters.
    pub cell_size: f64,
    pub walks: WalkConfig,
    pub skipgram: SkipGramConfig,
    pub seed: u64,
}

impl Default for CellsSection {
    fn default() -> Self {
        CellsSection {
            cell_size: 100.0,
            walks: WalkConfig::default(),
            skipgram: SkipGramConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub d_h: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub patch: usize,
    pub max_len: usize,
    pub mode: AttentionMode,
    pub flat_layers: usize,
    pub features: FeatureSet,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            d_h: 256,
            heads: 4,
            ffn_mult: 4,
            patch: 4,
            max_len: 200,
            mode: AttentionMode::Hierarchical,
            flat_layers: 2,
            features: FeatureSet::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_queries: usize,
    pub db_size: usize,
    pub downsample_rates: Vec<f64>,
    pub distort_rates: Vec<f64>,
    /// Distortion offset bound in meters.
    pub distort_delta: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_queries: 100,
            db_size: 2000,
            downsample_rates: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            distort_rates: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            distort_delta: 30.0,
            batch_size: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub pool: usize,
    pub split: [f64; 3],
    pub measure: Measure,
    pub epochs: usize,
    pub anchors_per_batch: usize,
    pub lr: f64,
    pub encoder_lr_scale: f64,
    pub freeze_encoder: bool,
    pub neighbours: usize,
    pub randoms: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            pool: 1000,
            split: [0.7, 0.1, 0.2],
            measure: Measure::Hausdorff,
            epochs: 40,
            anchors_per_batch: 32,
            lr: 3e-3,
            encoder_lr_scale: 0.1,
            freeze_encoder: false,
            neighbours: 1,
            randoms: 3,
            patience: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub len: usize,
    pub batch_size: usize,
    pub batches: usize,
    pub warmup: usize,
    /// Batch counts of the scaling runs.
    pub workloads: Vec<usize>,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            len: 200,
            batch_size: 128,
            batches: 100,
            warmup: 2,
            workloads: vec![25, 50],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub cells: CellsSection,
    pub encoder: EncoderSection,
    pub pretrain: PretrainConfig,
    pub eval: EvalSection,
    pub finetune: FinetuneSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs/default"),
            data: DataSection::default(),
            cells: CellsSection::default(),
            encoder: EncoderSection::default(),
            pretrain: PretrainConfig::default(),
            eval: EvalSection::default(),
            finetune: FinetuneSection::default(),
            bench: BenchSection::default(),
        }
    }
}

impl RunConfig {
    /// Settings sized for a single-core desktop run: a smaller region and
    /// hidden width, lighter random walks, faster pretraining.
    pub fn desk() -> Self {
        let mut c = RunConfig::default();
        c.output_dir = PathBuf::from("runs/desk");
        c.data.region = Region::PORTO_DESK;
        c.data.max_pretrain = Some(5000);
        c.cells.walks.walks_per_node = 4;
        c.cells.walks.walk_length = 40;
        c.cells.skipgram.dim = 32;
        c.cells.skipgram.epochs = 2;
        c.encoder.d_h = 64;
        c.pretrain.lr = 1e-3;
        c.pretrain.queue_size = 1024;
        c.pretrain.momentum = 0.99;
        c
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `section.key=value`, where `value` is a TOML literal; bare
    /// words are taken as strings.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside a section")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value);
                break;
            }
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{assignment}`: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = &self.data;
        d.region.validate().map_err(|e| Error::Config(e.to_string()))?;
        if d.l_min == 0 || d.l_min > d.l_max {
            return bad(format!("data: need 1 <= l_min <= l_max, got {} and {}", d.l_min, d.l_max));
        }
        for (name, split) in [("data.split", d.split), ("finetune.split", self.finetune.split)] {
            if split.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (split.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return bad(format!("{name} must be three ratios summing to 1, got {split:?}"));
            }
        }
        match (d.source, &d.path) {
            (DataSource::Synthetic, _) => d.synth.validate()?,
            (_, None) => return bad(format!("data.path is required for source {:?}", d.source)),
            (_, Some(p)) if !p.exists() => return bad(format!("data.path {} does not exist", p.display())),
            _ => {}
        }
        if !(self.cells.cell_size > 0.0) {
            return bad(format!("cells.cell_size must be positive, got {}", self.cells.cell_size));
        }
        if self.cells.skipgram.dim == 0 || self.cells.walks.walk_length < 2 {
            return bad("cells: skipgram.dim must be positive and walk_length at least 2".into());
        }
        if !(self.pretrain.momentum > 0.0 && self.pretrain.momentum < 1.0) {
            return bad(format!("pretrain.momentum must be in (0, 1), got {}", self.pretrain.momentum));
        }
        self.pretrain.validate()?;
        self.encoder_config().validate()?;
        if self.encoder.max_len < d.l_max {
            return bad(format!("encoder.max_len {} below data.l_max {}", self.encoder.max_len, d.l_max));
        }
        let e = &self.eval;
        if e.n_queries == 0 || e.db_size < e.n_queries || e.batch_size == 0 {
            return bad(format!("eval: need 0 < n_queries <= db_size, got {} and {}", e.n_queries, e.db_size));
        }
        if e.downsample_rates.iter().chain(&e.distort_rates).any(|r| !(0.0..=0.5).contains(r)) {
            return bad("eval: perturbation rates must lie in [0, 0.5]".into());
        }
        let f = &self.finetune;
        if f.pool < 10 || f.anchors_per_batch == 0 || !(f.lr > 0.0) || f.encoder_lr_scale < 0.0 {
            return bad("finetune: pool >= 10, anchors_per_batch > 0 and lr > 0 required".into());
        }
        let b = &self.bench;
        if b.batch_size == 0 || b.batches == 0 || b.len == 0 || b.len > self.encoder.max_len {
            return bad("bench: batch_size, batches and len must be positive, len <= encoder.max_len".into());
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.features.dim(self.cells.skipgram.dim)
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            d_in: self.feature_dim(),
            d_h: e.d_h,
            heads: e.heads,
            ffn_dim: e.ffn_mult * e.d_h,
            patch: e.patch,
            max_len: e.max_len,
            mode: e.mode,
            flat_layers: e.flat_layers,
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
