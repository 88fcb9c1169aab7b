use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{distort, downsample};
use crate::data::RawTrajectory;
use crate::error::{Error, Result};
use crate::prepare::derive_seed;

/// Anything that maps trajectories to `[n, dim]` embeddings.
pub trait Embedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, trajs: &[RawTrajectory]) -> Result<Vec<f32>>;
}

/// Alternate elements: 0-based even positions first, odd positions second.
pub fn odd_even_split<T: Clone>(items: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 4 {
        return Err(Error::Domain(format!("odd/even split needs at least 4 points, got {}", items.len())));
    }
    let a = items.iter().step_by(2).cloned().collect();
    let b = items.iter().skip(1).step_by(2).cloned().collect();
    Ok((a, b))
}

pub fn split_trajectory(t: &RawTrajectory) -> Result<(RawTrajectory, RawTrajectory)> {
    let (a, b) = odd_even_split(&t.points).map_err(|e| Error::Domain(format!("trajectory {}: {e}", t.id)))?;
    Ok((RawTrajectory::new(format!("{}#a", t.id), a), RawTrajectory::new(format!("{}#b", t.id), b)))
}

/// Queries are the first halves of sampled trajectories; the database holds
/// their second halves plus second halves of other trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalBench {
    pub queries: Vec<RawTrajectory>,
    pub database: Vec<RawTrajectory>,
    /// Database position of each query's counterpart.
    pub ground_truth: Vec<usize>,
}

impl RetrievalBench {
    pub fn build(pool: &[RawTrajectory], n_queries: usize, db_size: usize, seed: u64) -> Result<Self> {
        if n_queries == 0 || db_size < n_queries {
            return Err(Error::Config(format!("bench needs 0 < queries <= database, got {n_queries} and {db_size}")));
        }
        let mut order: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].len() >= 4).collect();
        if order.len() < db_size {
            return Err(Error::Domain(format!(
                "bench of {db_size} entries needs as many trajectories with >= 4 points; pool has {}",
                order.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        order.truncate(db_size);
        let mut halves: Vec<(RawTrajectory, RawTrajectory)> =
            order.iter().map(|&i| split_trajectory(&pool[i])).collect::<Result<_>>()?;
        let mut positions: Vec<usize> = (0..db_size).collect();
        positions.shuffle(&mut rng);
        let mut database = vec![RawTrajectory::new("", vec![]); db_size];
        let mut queries = Vec::with_capacity(n_queries);
        let mut ground_truth = Vec::with_capacity(n_queries);
        for (k, (a, b)) in halves.drain(..).enumerate() {
            database[positions[k]] = b;
            if k < n_queries {
                queries.push(a);
                ground_truth.push(positions[k]);
            }
        }
        let bench = RetrievalBench {
            queries,
            database,
            ground_truth,
        };
        bench.validate()?;
        Ok(bench)
    }

    pub fn validate(&self) -> Result<()> {
        if self.queries.len() != self.ground_truth.len() {
            return Err(Error::Domain("every query needs exactly one ground-truth entry".into()));
        }
        let mut seen = vec![false; self.database.len()];
        for (q, &g) in self.ground_truth.iter().enumerate() {
            if g >= self.database.len() || std::mem::replace(&mut seen[g], true) {
                return Err(Error::Domain(format!("query {q}: ground truth {g} missing or shared")));
            }
        }
        Ok(())
    }

    /// Same layout with every query and database entry replaced by `f`.
    pub fn map(&self, f: impl Fn(bool, usize, &RawTrajectory) -> Result<RawTrajectory> + Sync) -> Result<Self> {
        let queries = self.queries.par_iter().enumerate().map(|(i, t)| f(true, i, t)).collect::<Result<_>>()?;
        let database = self.database.par_iter().enumerate().map(|(i, t)| f(false, i, t)).collect::<Result<_>>()?;
        Ok(RetrievalBench {
            queries,
            database,
            ground_truth: self.ground_truth.clone(),
        })
    }
}

fn unit_rows(v: &[f32], dim: usize) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    for row in out.chunks_mut(dim.max(1)) {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|x| *x /= n);
    }
    out
}

/// 1-based rank of `gt` when the database is sorted by descending cosine
/// similarity to `q`; ties go to the lower database index.
fn rank(q: &[f64], db: &[f64], dim: usize, gt: usize) -> usize {
    let sim = |j: usize| db[j * dim..(j + 1) * dim].iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
    let target = sim(gt);
    let n = db.len() / dim;
    1 + (0..n)
        .filter(|&j| {
            let s = sim(j);
            j != gt && (s > target || (s == target && j < gt))
        })
        .count()
}

/// Per-query ranks from precomputed embeddings.
pub fn ranks_from_embeddings(queries: &[f32], database: &[f32], dim: usize, ground_truth: &[usize]) -> Result<Vec<usize>> {
    if dim == 0 || queries.len() != ground_truth.len() * dim || database.len() % dim != 0 {
        return Err(Error::shape(
            "mean_rank",
            format!("{} query values, {} database values, dim {dim}", queries.len(), database.len()),
        ));
    }
    let n = database.len() / dim;
    if let Some(&g) = ground_truth.iter().find(|&&g| g >= n) {
        return Err(Error::Domain(format!("ground truth {g} outside database of {n}")));
    }
    let (q, db) = (unit_rows(queries, dim), unit_rows(database, dim));
    Ok(ground_truth
        .par_iter()
        .enumerate()
        .map(|(i, &g)| rank(&q[i * dim..(i + 1) * dim], &db, dim, g))
        .collect())
}

pub fn mean_rank_from_embeddings(queries: &[f32], database: &[f32], dim: usize, ground_truth: &[usize]) -> Result<f64> {
    let ranks = ranks_from_embeddings(queries, database, dim, ground_truth)?;
    Ok(ranks.iter().sum::<usize>() as f64 / ranks.len().max(1) as f64)
}

pub fn mean_rank(model: &dyn Embedder, bench: &RetrievalBench) -> Result<f64> {
    bench.validate()?;
    let q = model.embed(&bench.queries)?;
    let db = model.embed(&bench.database)?;
    mean_rank_from_embeddings(&q, &db, model.dim(), &bench.ground_truth)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    Downsample,
    /// Offsets bounded by `delta` meters.
    Distort { delta: f64 },
}

impl Perturbation {
    pub fn name(&self) -> &'static str {
        match self {
            Perturbation::Downsample => "downsample",
            Perturbation::Distort { .. } => "distort",
        }
    }
}

/// Applies `kind` at `rate` to every query and database entry.
pub fn perturb_bench(bench: &RetrievalBench, kind: Perturbation, rate: f64, seed: u64) -> Result<RetrievalBench> {
    if rate == 0.0 {
        return Ok(bench.clone());
    }
    bench.map(|is_query, i, t| {
        let s = derive_seed(seed, &[rate.to_bits(), is_query as u64, i as u64]);
        match kind {
            Perturbation::Downsample => Ok(downsample(t, rate, s)),
            Perturbation::Distort { delta } => distort(t, rate, delta, s),
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub mean_rank: f64,
}

pub fn robustness_sweep(
    model: &dyn Embedder,
    bench: &RetrievalBench,
    kind: Perturbation,
    rates: &[f64],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    rates
        .iter()
        .map(|&rate| {
            if !(0.0..=0.5).contains(&rate) {
                return Err(Error::Config(format!("perturbation rate {rate} outside [0, 0.5]")));
            }
            let b = perturb_bench(bench, kind, rate, seed)?;
            Ok(SweepRow {
                rate,
                mean_rank: mean_rank(model, &b)?,
            })
        })
        .collect()
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    for r in rows {
        w.serialize(r).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
