//! One function per subcommand. Each reads its upstream manifests, writes
//! its artifacts into the output directory and finishes with a manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use trajsim_core::cellgraph::{CellEmbeddingTable, CellGraph};
use trajsim_core::data::{generate_synthetic, ingest_jsonl, write_jsonl, DatasetSplit};
use trajsim_core::encoder::{AttentionMode, Encoder};
use trajsim_core::moco::write_loss_log;
use trajsim_core::numeric::Archive;
use trajsim_core::pipeline::{
    build_cell_graph, load_raw, make_corpus, pretrain_model, retrieval_bench, run_finetune, train_cell_embeddings,
    Corpus, Featurizer, TrajectoryModel,
};
use trajsim_core::tasks::{
    ablate, bench_efficiency, robustness_sweep, synthetic_workload, write_csv, EfficiencyReport,
    Perturbation, Variant,
};
use trajsim_core::{Error, Result, RunConfig};

use crate::manifest::{require, Manifest};

const CORPUS: &str = "corpus.jsonl";
const SPLIT: &str = "split.json";
const GRAPH: &str = "cell_graph.txt";
const CELLS: &str = "cells";
const ENCODER: &str = "encoder.ckpt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Protocol {
    Rank,
    Downsample,
    Distort,
}

/// Resolved configuration and where its artifacts live.
pub struct Ctx {
    pub cfg: RunConfig,
    pub hash: String,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
        let hash = cfg.hash();
        Ok(Ctx { cfg, hash })
    }

    fn dir(&self) -> &Path {
        &self.cfg.output_dir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir().join(name)
    }

    fn require(&self, stage: &str) -> Result<Manifest> {
        require(self.dir(), stage, &self.hash)
    }

    fn finish(&self, stage: &str, inputs: &[&str], artifacts: &[&str], summary: serde_json::Value) -> Result<()> {
        let mut m = Manifest::new(stage, &self.hash);
        m.inputs = inputs.iter().map(|s| s.to_string()).collect();
        m.artifacts = artifacts.iter().map(|s| s.to_string()).collect();
        m.summary = summary;
        m.write(self.dir())?;
        log::info!("{stage}: wrote {} to {}", artifacts.join(", "), self.dir().display());
        Ok(())
    }

    fn corpus(&self) -> Result<Corpus> {
        self.require("preprocess")?;
        let ingested = ingest_jsonl(&self.path(CORPUS))?;
        let split_path = self.path(SPLIT);
        let text = std::fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
        let split: DatasetSplit =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", split_path.display())))?;
        if split.total() != ingested.trajectories.len() || ingested.skipped > 0 {
            return Err(Error::Format(format!(
                "{} does not match {} ({} trajectories, split covers {})",
                CORPUS,
                SPLIT,
                ingested.trajectories.len(),
                split.total()
            )));
        }
        Ok(Corpus {
            trajectories: ingested.trajectories,
            split,
            skipped: 0,
        })
    }

    fn table(&self) -> Result<CellEmbeddingTable> {
        self.require("train-cells")?;
        CellEmbeddingTable::load(self.dir(), CELLS)
    }

    fn model(&self) -> Result<TrajectoryModel> {
        let table = self.table()?;
        self.require("pretrain")?;
        let encoder = Encoder::load(&self.path(ENCODER))?;
        if encoder.config() != &self.cfg.encoder_config() {
            return Err(Error::Config(format!(
                "{ENCODER} was trained with a different encoder configuration; rerun `trajsim pretrain`"
            )));
        }
        Ok(TrajectoryModel {
            featurizer: Featurizer::new(&self.cfg, table)?,
            encoder,
            batch_size: self.cfg.eval.batch_size,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn synth(cfg: &RunConfig, count: usize, out: &Path) -> Result<()> {
    cfg.data.synth.validate()?;
    let trajs = generate_synthetic(count, &cfg.data.region, cfg.data.seed, &cfg.data.synth)?;
    write_jsonl(out, &trajs)?;
    log::info!("synth: {} trajectories to {}", trajs.len(), out.display());
    Ok(())
}

pub fn preprocess(ctx: &Ctx) -> Result<()> {
    let corpus = make_corpus(load_raw(&ctx.cfg)?, &ctx.cfg)?;
    write_jsonl(&ctx.path(CORPUS), &corpus.trajectories)?;
    write_json(&ctx.path(SPLIT), &corpus.split)?;
    ctx.finish(
        "preprocess",
        &[],
        &[CORPUS, SPLIT],
        json!({
            "trajectories": corpus.trajectories.len(),
            "train": corpus.split.train.len(),
            "validation": corpus.split.validation.len(),
            "test": corpus.split.test.len(),
            "skipped_at_ingest": corpus.skipped,
        }),
    )
}

pub fn build_graph(ctx: &Ctx) -> Result<()> {
    let corpus = ctx.corpus()?;
    let graph = build_cell_graph(&ctx.cfg, &corpus.train())?;
    graph.save(&ctx.path(GRAPH))?;
    ctx.finish(
        "build-graph",
        &["preprocess"],
        &[GRAPH],
        json!({ "nodes": graph.num_nodes(), "edges": graph.num_edges(), "transitions": graph.total_weight() }),
    )
}

pub fn train_cells(ctx: &Ctx) -> Result<()> {
    ctx.require("build-graph")?;
    let graph = CellGraph::load(&ctx.path(GRAPH))?;
    let out = train_cell_embeddings(&ctx.cfg, &graph)?;
    out.table.save(ctx.dir(), CELLS)?;
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        loss: f64,
    }
    let rows: Vec<Row> = out.epoch_losses.iter().enumerate().map(|(epoch, &loss)| Row { epoch, loss }).collect();
    write_csv(&ctx.path("skipgram_loss.csv"), &rows)?;
    ctx.finish(
        "train-cells",
        &["build-graph"],
        &["cells.f32", "cells.manifest.json", "skipgram_loss.csv"],
        json!({ "cells": out.table.len(), "dim": out.table.dim, "epoch_losses": out.epoch_losses }),
    )
}

pub fn pretrain(ctx: &Ctx) -> Result<()> {
    let corpus = ctx.corpus()?;
    let featurizer = Featurizer::new(&ctx.cfg, ctx.table()?)?;
    let (model, out) = pretrain_model(&ctx.cfg, &corpus, &featurizer)?;
    model.encoder.save(&ctx.path(ENCODER))?;
    write_loss_log(&ctx.path("pretrain_loss.csv"), &out.log)?;
    ctx.finish(
        "pretrain",
        &["preprocess", "train-cells"],
        &[ENCODER, "pretrain_loss.csv"],
        json!({ "epoch_losses": out.epoch_losses, "val_losses": out.val_losses, "best_epoch": out.best_epoch }),
    )
}

pub fn finetune(ctx: &Ctx) -> Result<()> {
    let corpus = ctx.corpus()?;
    let model = ctx.model()?;
    let out = run_finetune(&ctx.cfg, &corpus, &model)?;
    out.encoder.save(&ctx.path("finetune_encoder.ckpt"))?;
    let meta = json!({ "head": { "d_h": out.encoder.dim(), "d_out": out.head.d_out() } }).to_string();
    Archive::from_params(&out.head.params, meta).save(&ctx.path("finetune_head.ckpt"))?;
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        train_loss: f64,
        val_hr5: Option<f64>,
        val_hr20: Option<f64>,
        val_r5_20: Option<f64>,
    }
    let rows: Vec<Row> = out
        .train_losses
        .iter()
        .enumerate()
        .map(|(epoch, &train_loss)| {
            let v = out.validation.get(epoch);
            Row {
                epoch,
                train_loss,
                val_hr5: v.map(|m| m.hr5),
                val_hr20: v.map(|m| m.hr20),
                val_r5_20: v.map(|m| m.r5_20),
            }
        })
        .collect();
    write_csv(&ctx.path("finetune_epochs.csv"), &rows)?;
    write_csv(&ctx.path("finetune_test.csv"), &[out.test])?;
    ctx.finish(
        "finetune",
        &["preprocess", "train-cells", "pretrain"],
        &["finetune_encoder.ckpt", "finetune_head.ckpt", "finetune_epochs.csv", "finetune_test.csv"],
        json!({ "measure": ctx.cfg.finetune.measure, "test": out.test }),
    )
}

pub fn evaluate(ctx: &Ctx, protocol: Protocol) -> Result<()> {
    let corpus = ctx.corpus()?;
    let model = ctx.model()?;
    let bench = retrieval_bench(&ctx.cfg, &corpus)?;
    let e = &ctx.cfg.eval;
    let (name, rows) = match protocol {
        Protocol::Rank => ("eval_rank.csv", robustness_sweep(&model, &bench, Perturbation::Downsample, &[0.0], e.seed)?),
        Protocol::Downsample => (
            "eval_downsample.csv",
            robustness_sweep(&model, &bench, Perturbation::Downsample, &e.downsample_rates, e.seed)?,
        ),
        Protocol::Distort => (
            "eval_distort.csv",
            robustness_sweep(&model, &bench, Perturbation::Distort { delta: e.distort_delta }, &e.distort_rates, e.seed)?,
        ),
    };
    write_csv(&ctx.path(name), &rows)?;
    let stage = format!("evaluate-{}", name.trim_start_matches("eval_").trim_end_matches(".csv"));
    ctx.finish(
        &stage,
        &["preprocess", "train-cells", "pretrain"],
        &[name],
        json!({ "queries": bench.queries.len(), "database": bench.database.len(), "rows": rows }),
    )
}

pub fn bench(ctx: &Ctx) -> Result<()> {
    let b = &ctx.cfg.bench;
    let ec = ctx.cfg.encoder_config();
    let items = synthetic_workload(ec.d_in, b.len, ec.patch, b.batch_size, ctx.cfg.pretrain.seed)?;
    let mut rows: Vec<EfficiencyReport> = Vec::new();
    for mode in [AttentionMode::Hierarchical, AttentionMode::Flat] {
        let enc = Encoder::new(ec.clone().with_mode(mode), ctx.cfg.pretrain.seed)?;
        rows.push(bench_efficiency(&enc, &items, b.batch_size, b.batches, b.warmup)?);
    }
    let hier = Encoder::new(ec.clone(), ctx.cfg.pretrain.seed)?;
    #[derive(Serialize)]
    struct Scaling {
        batches: usize,
        samples: usize,
        total_seconds: f64,
    }
    let mut scaling = Vec::new();
    for &w in &b.workloads {
        let r = bench_efficiency(&hier, &items, b.batch_size, w, b.warmup)?;
        scaling.push(Scaling {
            batches: w,
            samples: w * b.batch_size,
            total_seconds: r.total_seconds,
        });
    }
    write_csv(&ctx.path("bench.csv"), &rows)?;
    write_csv(&ctx.path("bench_scaling.csv"), &scaling)?;
    let speedup = rows[0].throughput / rows[1].throughput;
    let flops_ratio = rows[0].flops_per_sample as f64 / rows[1].flops_per_sample as f64;
    ctx.finish(
        "bench",
        &[],
        &["bench.csv", "bench_scaling.csv"],
        json!({ "throughput_ratio": speedup, "flops_ratio": flops_ratio }),
    )
}

pub fn ablation(ctx: &Ctx, variants: &[Variant], seeds: &[u64]) -> Result<()> {
    let corpus = ctx.corpus()?;
    let table = ctx.table()?;
    let bench = retrieval_bench(&ctx.cfg, &corpus)?;
    let rows = ablate(&ctx.cfg, variants, seeds, &corpus, &table, &bench)?;
    write_csv(&ctx.path("ablation.csv"), &rows)?;
    ctx.finish("ablate", &["preprocess", "train-cells"], &["ablation.csv"], json!({ "rows": rows }))
}
