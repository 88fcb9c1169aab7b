//! Stage functions shared by the command line and the test suites: corpus
//! loading, cell embeddings, featurization, pretraining, fine-tuning.

use rayon::prelude::*;

use crate::cellgraph::{node2vec_walks, train_skipgram, CellEmbeddingTable, CellGraph, GridSpec, SkipGramOutput};
use crate::config::{DataSource, RunConfig};
use crate::data::{
    carve_finetune, filter_dataset, generate_synthetic, ingest_jsonl, ingest_porto_csv, split_dataset, DatasetSplit,
    Ingested, PortoOptions, RawTrajectory,
};
use crate::encoder::{Encoder, PatchedSequence};
use crate::error::{Error, Result};
use crate::measures::{pairwise_matrix, Measure, Pt};
use crate::moco::{pretrain, PretrainOutput};
use crate::movsem::{normalize, project_points, ProjectedRegion};
use crate::prepare::{derive_seed, FeatureContext, PreparedTrajectory};
use crate::tasks::approx::{finetune_approx, FinetuneOutput, Labelled};
use crate::tasks::retrieval::{Embedder, RetrievalBench};

/// Filtered trajectories and their train/validation/test partition.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub trajectories: Vec<RawTrajectory>,
    pub split: DatasetSplit,
    pub skipped: usize,
}

impl Corpus {
    pub fn subset(&self, idx: &[usize]) -> Vec<RawTrajectory> {
        idx.iter().map(|&i| self.trajectories[i].clone()).collect()
    }

    pub fn train(&self) -> Vec<RawTrajectory> {
        self.subset(&self.split.train)
    }

    pub fn validation(&self) -> Vec<RawTrajectory> {
        self.subset(&self.split.validation)
    }

    pub fn test(&self) -> Vec<RawTrajectory> {
        self.subset(&self.split.test)
    }
}

pub fn load_raw(cfg: &RunConfig) -> Result<Ingested> {
    let d = &cfg.data;
    let path = || {
        d.path
            .clone()
            .ok_or_else(|| Error::Config(format!("data.path is required for source {:?}", d.source)))
    };
    match d.source {
        DataSource::Synthetic => Ok(Ingested {
            trajectories: generate_synthetic(d.synthetic_count, &d.region, d.seed, &d.synth)?,
            skipped: 0,
        }),
        DataSource::Jsonl => ingest_jsonl(&path()?),
        DataSource::Porto => ingest_porto_csv(
            &path()?,
            PortoOptions {
                sample_interval: d.sample_interval,
            },
        ),
    }
}

pub fn make_corpus(raw: Ingested, cfg: &RunConfig) -> Result<Corpus> {
    let d = &cfg.data;
    let trajectories = filter_dataset(&raw.trajectories, &d.region, d.l_min, d.l_max);
    if trajectories.is_empty() {
        return Err(Error::Domain(format!(
            "no trajectories left after filtering {} inputs to the region and {}..={} points",
            raw.trajectories.len(),
            d.l_min,
            d.l_max
        )));
    }
    let split = split_dataset(trajectories.len(), (d.split[0], d.split[1], d.split[2]), d.seed)?;
    log::info!(
        "corpus: {} trajectories ({} train, {} validation, {} test), {} skipped at ingest",
        trajectories.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        raw.skipped
    );
    Ok(Corpus {
        trajectories,
        split,
        skipped: raw.skipped,
    })
}

pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    make_corpus(load_raw(cfg)?, cfg)
}

pub fn grid_for(cfg: &RunConfig) -> Result<(ProjectedRegion, GridSpec)> {
    let region = cfg.data.region.projected()?;
    let grid = GridSpec::new(cfg.cells.cell_size, &region)?;
    Ok((region, grid))
}

pub fn build_cell_graph(cfg: &RunConfig, trajs: &[RawTrajectory]) -> Result<CellGraph> {
    let (region, grid) = grid_for(cfg)?;
    let seqs: Vec<Vec<u32>> = trajs
        .par_iter()
        .map(|t| Ok(grid.cells(&normalize(t, &region)?)))
        .collect::<Result<_>>()?;
    Ok(CellGraph::build(&seqs))
}

pub fn train_cell_embeddings(cfg: &RunConfig, graph: &CellGraph) -> Result<SkipGramOutput> {
    let c = &cfg.cells;
    let walks = node2vec_walks(graph, &c.walks, derive_seed(c.seed, &[1]));
    train_skipgram(graph, &walks, &c.skipgram, derive_seed(c.seed, &[2]))
}

/// Cell graph and skip-gram embeddings from training trajectories.
pub fn build_cells(cfg: &RunConfig, train: &[RawTrajectory]) -> Result<CellEmbeddingTable> {
    let graph = build_cell_graph(cfg, train)?;
    log::info!("cell graph: {} nodes, {} edges", graph.num_nodes(), graph.num_edges());
    Ok(train_cell_embeddings(cfg, &graph)?.table)
}

/// Raw trajectory to encoder input.
#[derive(Clone, Debug)]
pub struct Featurizer {
    pub region: ProjectedRegion,
    pub grid: GridSpec,
    pub ctx: FeatureContext,
}

impl Featurizer {
    pub fn new(cfg: &RunConfig, table: CellEmbeddingTable) -> Result<Self> {
        if table.dim != cfg.cells.skipgram.dim {
            return Err(Error::Config(format!(
                "cell embeddings have dimension {}, config expects {}",
                table.dim, cfg.cells.skipgram.dim
            )));
        }
        let (region, grid) = grid_for(cfg)?;
        Ok(Featurizer {
            region,
            grid,
            ctx: FeatureContext {
                table,
                set: cfg.encoder.features,
                patch: cfg.encoder.patch,
            },
        })
    }

    pub fn prepare(&self, t: &RawTrajectory) -> Result<PreparedTrajectory> {
        Ok(PreparedTrajectory::new(normalize(t, &self.region)?, &self.grid))
    }

    pub fn prepare_all(&self, trajs: &[RawTrajectory]) -> Result<Vec<PreparedTrajectory>> {
        trajs.par_iter().map(|t| self.prepare(t)).collect()
    }

    pub fn patched_all(&self, trajs: &[RawTrajectory]) -> Result<Vec<PatchedSequence>> {
        trajs
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let p = self.prepare(t)?;
                self.ctx
                    .patched(&p, None)
                    .map_err(|e| Error::Domain(format!("trajectory {i} ({}): {e}", t.id)))
            })
            .collect()
    }
}

/// Featurizer plus encoder; embeds raw trajectories.
#[derive(Clone, Debug)]
pub struct TrajectoryModel {
    pub featurizer: Featurizer,
    pub encoder: Encoder<f32>,
    pub batch_size: usize,
}

impl Embedder for TrajectoryModel {
    fn dim(&self) -> usize {
        self.encoder.dim()
    }

    fn embed(&self, trajs: &[RawTrajectory]) -> Result<Vec<f32>> {
        let items = self.featurizer.patched_all(trajs)?;
        self.encoder.embed_all(&items, self.batch_size)
    }
}

/// Contrastive pretraining on the (capped) training split, early stopping
/// on the validation split.
pub fn pretrain_model(cfg: &RunConfig, corpus: &Corpus, featurizer: &Featurizer) -> Result<(TrajectoryModel, PretrainOutput)> {
    let mut train_idx = corpus.split.train.clone();
    if let Some(cap) = cfg.data.max_pretrain {
        train_idx.truncate(cap);
    }
    let train = featurizer.prepare_all(&corpus.subset(&train_idx))?;
    let validation = featurizer.prepare_all(&corpus.validation())?;
    log::info!("pretraining on {} trajectories, validating on {}", train.len(), validation.len());
    let out = pretrain(&train, &validation, &featurizer.ctx, cfg.encoder_config(), &cfg.pretrain)?;
    let model = TrajectoryModel {
        featurizer: featurizer.clone(),
        encoder: out.encoder.clone(),
        batch_size: cfg.eval.batch_size,
    };
    Ok((model, out))
}

/// Odd/even bench drawn from the test split.
pub fn retrieval_bench(cfg: &RunConfig, corpus: &Corpus) -> Result<RetrievalBench> {
    RetrievalBench::build(&corpus.test(), cfg.eval.n_queries, cfg.eval.db_size, cfg.eval.seed)
}

/// Points in projected meters, as the distance measures expect.
pub fn projected_points(trajs: &[RawTrajectory]) -> Result<Vec<Vec<Pt>>> {
    trajs
        .par_iter()
        .map(|t| Ok(project_points(t)?.into_iter().map(|(x, y)| [x, y]).collect()))
        .collect()
}

pub fn ground_truth(measure: &Measure, trajs: &[RawTrajectory]) -> Result<Vec<f64>> {
    pairwise_matrix(&projected_points(trajs)?, measure)
}

/// Fine-tuning subset of the test split, re-split train/validation/test.
pub fn finetune_split(cfg: &RunConfig, corpus: &Corpus) -> Result<DatasetSplit> {
    let f = &cfg.finetune;
    carve_finetune(&corpus.split.test, f.pool, (f.split[0], f.split[1], f.split[2]), f.seed)
}

pub fn run_finetune(cfg: &RunConfig, corpus: &Corpus, model: &TrajectoryModel) -> Result<FinetuneOutput> {
    let split = finetune_split(cfg, corpus)?;
    let part = |idx: &[usize]| -> Result<(Vec<PatchedSequence>, Vec<f64>)> {
        let trajs = corpus.subset(idx);
        Ok((model.featurizer.patched_all(&trajs)?, ground_truth(&cfg.finetune.measure, &trajs)?))
    };
    let (tr, tr_gt) = part(&split.train)?;
    let (va, va_gt) = part(&split.validation)?;
    let (te, te_gt) = part(&split.test)?;
    finetune_approx(
        model.encoder.clone(),
        Labelled { items: &tr, gt: &tr_gt },
        Labelled { items: &va, gt: &va_gt },
        Labelled { items: &te, gt: &te_gt },
        &cfg.finetune,
    )
}
