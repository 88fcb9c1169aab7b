use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::CellGraph;
use crate::data::store::FloatBlock;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to `lr * 1e-4`.
    pub lr: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 64,
            window: 10,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
        }
    }
}

/// Cell id to vector map with a fixed dimension; lookups of unknown
/// cells return `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellEmbeddingTable {
    pub dim: usize,
    cells: Vec<u32>,
    values: Vec<f32>,
}

impl CellEmbeddingTable {
    /// `cells` must be strictly increasing.
    pub fn new(dim: usize, cells: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        if values.len() != dim * cells.len() {
            return Err(Error::shape(
                "cell_embedding_table",
                format!("{} cells x {dim} vs {} values", cells.len(), values.len()),
            ));
        }
        if cells.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("cell ids must be strictly increasing".into()));
        }
        Ok(CellEmbeddingTable { dim, cells, values })
    }

    /// A table with no cells: every lookup falls back to zeros.
    pub fn empty(dim: usize) -> Self {
        CellEmbeddingTable {
            dim,
            cells: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn get(&self, cell: u32) -> Option<&[f32]> {
        self.cells
            .binary_search(&cell)
            .ok()
            .map(|i| &self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn to_block(&self) -> Result<FloatBlock> {
        FloatBlock::dense(
            "cell_embeddings",
            self.cells.iter().map(|c| c.to_string()).collect(),
            self.dim,
            self.values.clone(),
        )
    }

    pub fn from_block(b: FloatBlock) -> Result<Self> {
        let cells = b
            .ids
            .iter()
            .map(|s| s.parse::<u32>().map_err(|_| Error::Format(format!("bad cell id {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(b.dim, cells, b.values)
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        self.to_block()?.save(dir, name)
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        Self::from_block(FloatBlock::load(dir, name)?)
    }
}

#[derive(Clone, Debug)]
pub struct SkipGramOutput {
    pub table: CellEmbeddingTable,
    /// Mean negative-sampling loss per (center, context) pair, per epoch.
    pub epoch_losses: Vec<f64>,
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Skip-gram with negative sampling over node-index walks; the table
/// covers every node of `graph`. Single-threaded and seed-deterministic.
pub fn train_skipgram(
    graph: &CellGraph,
    walks: &[Vec<usize>],
    cfg: &SkipGramConfig,
    seed: u64,
) -> Result<SkipGramOutput> {
    if cfg.dim == 0 {
        return Err(Error::Config("cell embedding dimension must be positive".into()));
    }
    let n = graph.num_nodes();
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input: Vec<f32> = (0..n * d).map(|_| rng.random_range(-0.5..0.5) / d as f32).collect();
    let mut output = vec![0.0f32; n * d];
    let mut losses = Vec::with_capacity(cfg.epochs);
    let tokens: usize = walks.iter().map(|w| w.len()).sum();

    if cfg.epochs > 0 {
        if tokens == 0 {
            return Err(Error::Domain("skip-gram needs at least one non-empty walk".into()));
        }
        let mut freq = vec![0f64; n];
        for w in walks {
            for &v in w {
                freq[v] += 1.0;
            }
        }
        let noise = WeightedIndex::new(freq.iter().map(|&f| f.powf(0.75)))
            .map_err(|e| Error::Domain(format!("negative-sampling table: {e}")))?;
        let total_steps = (tokens * cfg.epochs) as f64;
        let mut processed = 0usize;
        let mut grad = vec![0.0f32; d];
        for _ in 0..cfg.epochs {
            let (mut loss_sum, mut pairs) = (0.0f64, 0usize);
            for w in walks {
                for (i, &center) in w.iter().enumerate() {
                    let lr = (cfg.lr * (1.0 - processed as f64 / total_steps)).max(cfg.lr * 1e-4) as f32;
                    processed += 1;
                    let lo = i.saturating_sub(cfg.window);
                    let hi = (i + cfg.window + 1).min(w.len());
                    for (j, &ctx) in w.iter().enumerate().take(hi).skip(lo) {
                        if j == i {
                            continue;
                        }
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        let h = center * d;
                        for k in 0..=cfg.negatives {
                            let (target, label) = if k == 0 {
                                (ctx, 1.0f32)
                            } else {
                                let t = noise.sample(&mut rng);
                                if t == ctx {
                                    continue;
                                }
                                (t, 0.0)
                            };
                            let o = target * d;
                            let dot: f32 = (0..d).map(|c| input[h + c] * output[o + c]).sum();
                            let s = sigmoid(dot);
                            loss_sum -= if label == 1.0 {
                                (s.max(1e-7) as f64).ln()
                            } else {
                                ((1.0 - s).max(1e-7) as f64).ln()
                            };
                            let g = (label - s) * lr;
                            for c in 0..d {
                                grad[c] += g * output[o + c];
                                output[o + c] += g * input[h + c];
                            }
                        }
                        for c in 0..d {
                            input[h + c] += grad[c];
                        }
                        pairs += 1;
                    }
                }
            }
            losses.push(if pairs > 0 { loss_sum / pairs as f64 } else { 0.0 });
        }
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite cell embedding after training".into()));
    }
    Ok(SkipGramOutput {
        table: CellEmbeddingTable::new(d, graph.nodes().to_vec(), input)?,
        epoch_losses: losses,
    })
}
