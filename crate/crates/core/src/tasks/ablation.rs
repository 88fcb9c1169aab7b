use serde::{Deserialize, Serialize};

use crate::augment::ViewStrategy;
use crate::cellgraph::CellEmbeddingTable;
use crate::config::RunConfig;
use crate::encoder::AttentionMode;
use crate::error::Result;
use crate::movsem::FeatureSet;
use crate::pipeline::{pretrain_model, Corpus, Featurizer};
use crate::tasks::retrieval::{mean_rank, RetrievalBench};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Cell embeddings only, no movement dynamics.
    NoMse,
    /// Flat attention instead of the patch hierarchy.
    NoHse,
    /// Random point masking instead of curvature-guided views.
    NoCga,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoMse, Variant::NoHse, Variant::NoCga];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMse => "-MSE",
            Variant::NoHse => "-HSE",
            Variant::NoCga => "-CGA",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s) || format!("{v:?}").eq_ignore_ascii_case(s))
    }
}

pub fn variant_config(base: &RunConfig, v: Variant) -> RunConfig {
    let mut c = base.clone();
    match v {
        Variant::Full => {}
        Variant::NoMse => c.encoder.features = FeatureSet::CellOnly,
        Variant::NoHse => c.encoder.mode = AttentionMode::Flat,
        Variant::NoCga => c.pretrain.strategy = ViewStrategy::RandomPoint,
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub mean_rank: f64,
    pub best_epoch: usize,
}

/// Pretrains and evaluates every variant under every training seed on a
/// shared corpus, cell table and bench.
pub fn ablate(
    base: &RunConfig,
    variants: &[Variant],
    seeds: &[u64],
    corpus: &Corpus,
    table: &CellEmbeddingTable,
    bench: &RetrievalBench,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for &v in variants {
            let mut cfg = variant_config(base, v);
            cfg.pretrain.seed = seed;
            let featurizer = Featurizer::new(&cfg, table.clone())?;
            let (model, out) = pretrain_model(&cfg, corpus, &featurizer)?;
            let mr = mean_rank(&model, bench)?;
            log::info!("ablation {} seed {seed}: mean rank {mr:.3}", v.name());
            rows.push(AblationRow {
                variant: v.name().into(),
                seed,
                mean_rank: mr,
                best_epoch: out.best_epoch,
            });
        }
    }
    Ok(rows)
}
