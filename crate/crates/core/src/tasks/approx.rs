//! Fine-tuning the encoder with an MLP head to approximate a classic
//! distance measure, and the top-k overlap metrics.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::FinetuneSection;
use crate::encoder::{Encoder, PatchedSequence};
use crate::error::{Error, Result};
use crate::numeric::nn::Linear;
use crate::numeric::{Adam, Graph, ParamSet, Var};
use crate::prepare::derive_seed;

/// Indices of `dist` in ascending order, ties by index, without `exclude`.
pub fn rank_row(dist: &[f64], exclude: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).filter(|&j| Some(j) != exclude).collect();
    idx.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    idx
}

/// `|pred[..k] ∩ gt[..k]| / k`.
pub fn hit_ratio(pred: &[usize], gt: &[usize], k: usize) -> f64 {
    overlap(&pred[..k.min(pred.len())], &gt[..k.min(gt.len())]) as f64 / k as f64
}

/// `|pred[..k_pred] ∩ gt[..k_gt]| / k_gt`.
pub fn recall_at(pred: &[usize], gt: &[usize], k_gt: usize, k_pred: usize) -> f64 {
    overlap(&pred[..k_pred.min(pred.len())], &gt[..k_gt.min(gt.len())]) as f64 / k_gt as f64
}

fn overlap(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|x| b.contains(x)).count()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxMetrics {
    pub hr5: f64,
    pub hr20: f64,
    pub r5_20: f64,
}

/// Metrics of a predicted `n x n` distance matrix against ground truth,
/// with every item serving as a query over the others.
pub fn approx_metrics(pred: &[f64], gt: &[f64], n: usize) -> Result<ApproxMetrics> {
    if pred.len() != n * n || gt.len() != n * n {
        return Err(Error::shape("approx_metrics", format!("{} and {} values for n = {n}", pred.len(), gt.len())));
    }
    if n < 21 {
        return Err(Error::Domain(format!("HR@20 needs at least 21 items, got {n}")));
    }
    let mut m = ApproxMetrics {
        hr5: 0.0,
        hr20: 0.0,
        r5_20: 0.0,
    };
    for i in 0..n {
        let p = rank_row(&pred[i * n..(i + 1) * n], Some(i));
        let g = rank_row(&gt[i * n..(i + 1) * n], Some(i));
        m.hr5 += hit_ratio(&p, &g, 5);
        m.hr20 += hit_ratio(&p, &g, 20);
        m.r5_20 += recall_at(&p, &g, 5, 20);
    }
    let n = n as f64;
    Ok(ApproxMetrics {
        hr5: m.hr5 / n,
        hr20: m.hr20 / n,
        r5_20: m.r5_20 / n,
    })
}

/// `Linear -> ReLU -> Linear`; pair distance is the Euclidean distance
/// between the head outputs.
#[derive(Clone, Debug)]
pub struct ApproxHead {
    pub params: ParamSet<f32>,
    l1: Linear,
    l2: Linear,
}

impl ApproxHead {
    pub fn new(d_h: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let l1 = Linear::new(&mut params, &mut rng, "head.l1", d_h, d_h);
        let l2 = Linear::new(&mut params, &mut rng, "head.l2", d_h, d_out);
        ApproxHead { params, l1, l2 }
    }

    pub fn forward(&self, g: &mut Graph<f32>, vars: &[Var], z: Var) -> Result<Var> {
        let h = self.l1.forward(g, vars, z)?;
        let h = g.relu(h);
        self.l2.forward(g, vars, h)
    }

    /// Head outputs for precomputed embeddings `[n, d_h]`.
    pub fn apply(&self, z: &[f32], n: usize) -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g)?;
        let z = g.constant(z.to_vec(), n, self.l1.d_in)?;
        let out = self.forward(&mut g, &vars, z)?;
        Ok(g.value(out).to_vec())
    }

    pub fn d_out(&self) -> usize {
        self.l2.d_out
    }
}

/// Predicted `n x n` distance matrix for `items`.
pub fn predict_distances(encoder: &Encoder<f32>, head: &ApproxHead, items: &[PatchedSequence], batch: usize) -> Result<Vec<f64>> {
    let n = items.len();
    let z = encoder.embed_all(items, batch)?;
    let h = head.apply(&z, n)?;
    let d = head.d_out();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = h[i * d..(i + 1) * d]
                .iter()
                .zip(&h[j * d..(j + 1) * d])
                .map(|(&a, &b)| ((a - b) as f64).powi(2))
                .sum();
            out[i * n + j] = s.sqrt();
            out[j * n + i] = s.sqrt();
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct FinetuneOutput {
    pub encoder: Encoder<f32>,
    pub head: ApproxHead,
    pub test: ApproxMetrics,
    pub validation: Vec<ApproxMetrics>,
    pub train_losses: Vec<f64>,
}

/// A labelled split: encoder inputs and their `n x n` ground truth.
pub struct Labelled<'a> {
    pub items: &'a [PatchedSequence],
    pub gt: &'a [f64],
}

impl Labelled<'_> {
    fn check(&self, what: &str) -> Result<()> {
        let n = self.items.len();
        if self.gt.len() != n * n {
            return Err(Error::shape("finetune", format!("{what}: {n} items, {} distances", self.gt.len())));
        }
        Ok(())
    }
}

fn sample_pairs(gt: &[f64], n: usize, anchors: &[usize], cfg: &FinetuneSection, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let near = 20.min(n - 1);
    let mut pairs = Vec::with_capacity(anchors.len() * (cfg.neighbours + cfg.randoms));
    for &a in anchors {
        let top = rank_row(&gt[a * n..(a + 1) * n], Some(a));
        for _ in 0..cfg.neighbours {
            pairs.push((a, *top[..near].choose(rng).expect("non-empty")));
        }
        for _ in 0..cfg.randoms {
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            pairs.push((a, b));
        }
    }
    pairs
}

/// Trains the head (and, unless frozen, the encoder at a scaled learning
/// rate) on MSE between predicted and mean-normalized true distances.
/// The epoch with the best validation HR@5 is kept.
pub fn finetune_approx(
    encoder: Encoder<f32>,
    train: Labelled<'_>,
    validation: Labelled<'_>,
    test: Labelled<'_>,
    cfg: &FinetuneSection,
) -> Result<FinetuneOutput> {
    train.check("train")?;
    validation.check("validation")?;
    test.check("test")?;
    let n = train.items.len();
    if n < 2 {
        return Err(Error::Domain("finetuning needs at least 2 training items".into()));
    }
    let off_diag: f64 = train.gt.iter().sum::<f64>() / (n * (n - 1)) as f64;
    let scale = if off_diag > 0.0 { off_diag } else { 1.0 };

    let mut encoder = encoder;
    let mut head = ApproxHead::new(encoder.dim(), encoder.dim(), derive_seed(cfg.seed, &[10]));
    let head_opt = Adam::with_lr(cfg.lr);
    let enc_opt = Adam::with_lr(cfg.lr * cfg.encoder_lr_scale);
    let train_encoder = !cfg.freeze_encoder && cfg.encoder_lr_scale > 0.0;
    let eval_batch = 128;

    let mut best: Option<(f64, Encoder<f32>, ApproxHead)> = None;
    let mut val_hist = Vec::new();
    let mut losses = Vec::new();
    let mut stale = 0;
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[11, epoch as u64]));
        let mut anchors: Vec<usize> = (0..n).collect();
        anchors.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in anchors.chunks(cfg.anchors_per_batch) {
            let pairs = sample_pairs(train.gt, n, chunk, cfg, &mut rng);
            let mut unique: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
            unique.sort_unstable();
            unique.dedup();
            let pos = |i: usize| unique.binary_search(&i).expect("present");
            let left: Vec<usize> = pairs.iter().map(|p| pos(p.0)).collect();
            let right: Vec<usize> = pairs.iter().map(|p| pos(p.1)).collect();
            let target: Vec<f32> = pairs.iter().map(|&(a, b)| (train.gt[a * n + b] / scale) as f32).collect();
            let batch: Vec<&PatchedSequence> = unique.iter().map(|&i| &train.items[i]).collect();

            let mut g = Graph::new();
            let enc_vars = if train_encoder {
                encoder.params.bind(&mut g)?
            } else {
                encoder.params.bind_frozen(&mut g)?
            };
            let head_vars = head.params.bind(&mut g)?;
            let z = encoder.forward(&mut g, &enc_vars, &batch)?;
            let h = head.forward(&mut g, &head_vars, z)?;
            let hl = g.gather(h, &left)?;
            let hr = g.gather(h, &right)?;
            let d = g.row_distance(hl, hr)?;
            let loss = g.mse(d, &target)?;
            let lv = g.value(loss)[0] as f64;
            if !lv.is_finite() {
                return Err(Error::Numeric(format!("finetune epoch {epoch} step {step}: loss is {lv}")));
            }
            let grads = g.backward(loss)?;
            head.params.accumulate(&grads, &head_vars, 1.0);
            head_opt.step(&mut head.params)?;
            if train_encoder {
                encoder.params.accumulate(&grads, &enc_vars, 1.0);
                enc_opt.step(&mut encoder.params)?;
            }
            total += lv;
            batches += 1;
            step += 1;
        }
        let mean = total / batches.max(1) as f64;
        losses.push(mean);

        let nv = validation.items.len();
        let score = if nv >= 21 {
            let pred = predict_distances(&encoder, &head, validation.items, eval_batch)?;
            let m = approx_metrics(&pred, validation.gt, nv)?;
            val_hist.push(m);
            m.hr5
        } else {
            -mean
        };
        log::info!("finetune epoch {epoch}: loss {mean:.5}, selection score {score:.4}");
        match &best {
            Some((b, _, _)) if score <= *b => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((score, encoder.clone(), head.clone()));
                stale = 0;
            }
        }
    }
    let (_, encoder, head) = best.ok_or_else(|| Error::Config("finetune.epochs must be positive".into()))?;
    let nt = test.items.len();
    let pred = predict_distances(&encoder, &head, test.items, eval_batch)?;
    let test = approx_metrics(&pred, test.gt, nt)?;
    Ok(FinetuneOutput {
        encoder,
        head,
        test,
        validation: val_hist,
        train_losses: losses,
    })
}
