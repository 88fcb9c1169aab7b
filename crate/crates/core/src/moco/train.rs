use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{info_nce_graph, normalize_rows};
use super::queue::Queue;
use crate::augment::ViewStrategy;
use crate::encoder::{Encoder, EncoderConfig, PatchedSequence};
use crate::error::{Error, Result};
use crate::numeric::{Adam, Graph, ParamSet};
use crate::prepare::{derive_seed, FeatureContext, PreparedTrajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau: f64,
    pub queue_size: usize,
    pub momentum: f64,
    pub patience: usize,
    /// Drop rate of each augmented view.
    pub rho: f64,
    pub strategy: ViewStrategy,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 20,
            batch_size: 128,
            lr: 1e-4,
            tau: 0.05,
            queue_size: 2048,
            momentum: 0.999,
            patience: 3,
            rho: 0.3,
            strategy: ViewStrategy::Cga,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("pretrain: {m}")));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.batch_size > self.queue_size {
            return bad(format!("batch_size {} exceeds queue_size {}", self.batch_size, self.queue_size));
        }
        if !(self.tau > 0.0) || !(self.lr > 0.0) {
            return bad(format!("tau {} and lr {} must be positive", self.tau, self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) && self.momentum != 1.0 {
            return bad(format!("momentum {} outside [0, 1]", self.momentum));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho {} outside [0, 1)", self.rho));
        }
        Ok(())
    }
}

/// `key <- m * key + (1 - m) * query` for every parameter.
pub fn momentum_update(key: &mut ParamSet<f32>, query: &ParamSet<f32>, m: f64) -> Result<()> {
    key.ema_from(query, m)
}

/// Query and key encoders, negative queue and optimizer state.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub query: Encoder<f32>,
    pub key: Encoder<f32>,
    pub queue: Queue,
    pub momentum: f64,
    pub tau: f64,
    pub adam: Adam,
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(encoder: EncoderConfig, cfg: &PretrainConfig) -> Result<Self> {
        cfg.validate()?;
        let query = Encoder::new(encoder, derive_seed(cfg.seed, &[1]))?;
        let queue = Queue::random(cfg.queue_size, query.dim(), derive_seed(cfg.seed, &[2]))?;
        Ok(TrainState {
            key: query.clone(),
            query,
            queue,
            momentum: cfg.momentum,
            tau: cfg.tau,
            adam: Adam::with_lr(cfg.lr),
            epoch: 0,
            step: 0,
            seed: cfg.seed,
        })
    }

    fn keys(&self, k_views: &[&PatchedSequence]) -> Result<Vec<f32>> {
        let mut k = self.key.encode_batch(k_views)?;
        normalize_rows(&mut k, self.key.dim())?;
        Ok(k)
    }

    /// Loss of the current state without updating anything.
    pub fn loss(&self, q_views: &[&PatchedSequence], k_views: &[&PatchedSequence]) -> Result<f64> {
        let k = self.keys(k_views)?;
        let mut g = Graph::new();
        let vars = self.query.params.bind_frozen(&mut g)?;
        let zq = self.query.forward(&mut g, &vars, q_views)?;
        let keys = g.constant(k, k_views.len(), self.key.dim())?;
        let queue = g.constant(self.queue.rows().to_vec(), self.queue.size(), self.queue.dim())?;
        let loss = info_nce_graph(&mut g, zq, keys, queue, self.tau)?;
        Ok(g.value(loss)[0] as f64)
    }

    /// One optimization step: Adam on the query encoder, momentum update of
    /// the key encoder, then the keys enter the queue.
    pub fn step(&mut self, q_views: &[&PatchedSequence], k_views: &[&PatchedSequence]) -> Result<f64> {
        if q_views.len() != k_views.len() {
            return Err(Error::shape("train step", format!("{} query vs {} key views", q_views.len(), k_views.len())));
        }
        let diag = |what: String, epoch: usize, step: u64| Error::Numeric(format!("epoch {epoch} step {step}: {what}"));
        let k = self.keys(k_views).map_err(|e| match e {
            Error::Numeric(m) => diag(format!("key {m}"), self.epoch, self.step),
            other => other,
        })?;
        let mut g = Graph::new();
        let vars = self.query.params.bind(&mut g)?;
        let zq = self.query.forward(&mut g, &vars, q_views)?;
        let keys = g.constant(k.clone(), k_views.len(), self.key.dim())?;
        let queue = g.constant(self.queue.rows().to_vec(), self.queue.size(), self.queue.dim())?;
        let loss_var = info_nce_graph(&mut g, zq, keys, queue, self.tau)?;
        let loss = g.value(loss_var)[0] as f64;
        if !loss.is_finite() {
            return Err(diag(format!("loss is {loss}"), self.epoch, self.step));
        }
        let grads = g.backward(loss_var)?;
        self.query.params.accumulate(&grads, &vars, 1.0);
        self.adam
            .step(&mut self.query.params)
            .map_err(|e| diag(e.to_string(), self.epoch, self.step))?;
        momentum_update(&mut self.key.params, &self.query.params, self.momentum)?;
        self.queue.enqueue(&k)?;
        self.step += 1;
        Ok(loss)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

pub fn write_loss_log(path: &Path, log: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in log {
        w.serialize(r).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct PretrainOutput {
    /// Query encoder from the epoch with the best validation loss.
    pub encoder: Encoder<f32>,
    pub log: Vec<LossRecord>,
    pub epoch_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_epoch: usize,
}

type ViewPair = (PatchedSequence, PatchedSequence);

fn make_views(
    items: &[PreparedTrajectory],
    idx: &[usize],
    ctx: &FeatureContext,
    cfg: &PretrainConfig,
    epoch: u64,
) -> Result<Vec<ViewPair>> {
    let floor = ctx.patch.max(2);
    idx.par_iter()
        .map(|&i| {
            let t = &items[i];
            let view = |v: u64| {
                let view = t.view(cfg.strategy, cfg.rho, floor, derive_seed(cfg.seed, &[epoch, i as u64, v]));
                ctx.patched(t, Some(&view.indices))
            };
            Ok((view(0)?, view(1)?))
        })
        .collect()
}

fn split_refs(pairs: &[ViewPair]) -> (Vec<&PatchedSequence>, Vec<&PatchedSequence>) {
    pairs.iter().map(|(a, b)| (a, b)).unzip()
}

/// Contrastive pretraining with early stopping on validation loss.
pub fn pretrain(
    train: &[PreparedTrajectory],
    validation: &[PreparedTrajectory],
    ctx: &FeatureContext,
    encoder: EncoderConfig,
    cfg: &PretrainConfig,
) -> Result<PretrainOutput> {
    if train.is_empty() {
        return Err(Error::Domain("pretraining set is empty".into()));
    }
    let mut state = TrainState::new(encoder, cfg)?;
    let val_idx: Vec<usize> = (0..validation.len()).collect();
    let val_views = make_views(validation, &val_idx, ctx, cfg, u64::MAX)?;

    let mut log = Vec::new();
    let (mut epoch_losses, mut val_losses) = (Vec::new(), Vec::new());
    let mut best = (f64::INFINITY, 0usize, state.query.clone());
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[3, epoch as u64])));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let views = make_views(train, chunk, ctx, cfg, epoch as u64)?;
            let (q, k) = split_refs(&views);
            let loss = state.step(&q, &k)?;
            total += loss * chunk.len() as f64;
            log.push(LossRecord {
                epoch,
                step: state.step,
                loss,
                lr: state.adam.lr,
            });
        }
        let mean = total / train.len() as f64;
        epoch_losses.push(mean);

        if val_views.is_empty() {
            log::info!("epoch {epoch}: train loss {mean:.4}");
            best = (mean, epoch, state.query.clone());
            continue;
        }
        let mut vsum = 0.0;
        for chunk in val_views.chunks(cfg.batch_size) {
            let (q, k) = split_refs(chunk);
            vsum += state.loss(&q, &k)? * chunk.len() as f64;
        }
        let vloss = vsum / val_views.len() as f64;
        val_losses.push(vloss);
        log::info!("epoch {epoch}: train loss {mean:.4}, validation loss {vloss:.4}");
        if vloss < best.0 {
            best = (vloss, epoch, state.query.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("early stop after epoch {epoch}; best epoch {}", best.1);
                break;
            }
        }
    }
    Ok(PretrainOutput {
        encoder: best.2,
        log,
        epoch_losses,
        val_losses,
        best_epoch: best.1,
    })
}
