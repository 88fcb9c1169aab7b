use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{attention_flops, make_patches, model_flops, AttentionMode, Encoder, PatchedSequence};
use crate::error::{Error, Result};
use crate::movsem::FeatureSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub mode: String,
    pub len: usize,
    pub batch_size: usize,
    pub batches: usize,
    pub flops_per_sample: u64,
    pub attention_flops_per_sample: u64,
    pub median_latency_ms: f64,
    pub per_sample_ms: f64,
    pub total_seconds: f64,
    pub throughput: f64,
}

/// `count` random feature sequences of exactly `len` points.
pub fn synthetic_workload(d_in: usize, len: usize, patch: usize, count: usize, seed: u64) -> Result<Vec<PatchedSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let f = FeatureSequence {
                dim: d_in,
                values: (0..len * d_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
            };
            make_patches(&f, patch)
        })
        .collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `batches` forward passes of `batch_size` items drawn cyclically
/// from `items`, after `warmup` untimed passes.
pub fn bench_efficiency(
    encoder: &Encoder<f32>,
    items: &[PatchedSequence],
    batch_size: usize,
    batches: usize,
    warmup: usize,
) -> Result<EfficiencyReport> {
    if items.is_empty() || batch_size == 0 || batches == 0 {
        return Err(Error::Config("bench needs items, a positive batch size and batch count".into()));
    }
    let batch_at = |b: usize| -> Vec<&PatchedSequence> {
        (0..batch_size).map(|k| &items[(b * batch_size + k) % items.len()]).collect()
    };
    for b in 0..warmup {
        encoder.encode_batch(&batch_at(b))?;
    }
    let mut lat = Vec::with_capacity(batches);
    let start = Instant::now();
    for b in 0..batches {
        let t = Instant::now();
        let z = encoder.encode_batch(&batch_at(b))?;
        std::hint::black_box(z);
        lat.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let total = start.elapsed().as_secs_f64();
    let len = items.iter().map(|s| s.len()).max().unwrap_or(0);
    let cfg = encoder.config();
    let samples = (batches * batch_size) as f64;
    Ok(EfficiencyReport {
        mode: match cfg.mode {
            AttentionMode::Hierarchical => "hierarchical".into(),
            AttentionMode::Flat => "flat".into(),
        },
        len,
        batch_size,
        batches,
        flops_per_sample: model_flops(cfg, len),
        attention_flops_per_sample: attention_flops(len, cfg.patch, cfg.d_h, cfg.mode),
        median_latency_ms: median(&mut lat),
        per_sample_ms: total * 1e3 / samples,
        total_seconds: total,
        throughput: samples / total,
    })
}
