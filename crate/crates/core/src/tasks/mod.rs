//! Evaluation protocols: odd/even retrieval, robustness sweeps, distance
//! approximation, efficiency benchmarks and ablations.

pub mod ablation;
pub mod approx;
pub mod efficiency;
pub mod retrieval;

pub use ablation::{ablate, variant_config, AblationRow, Variant};
pub use approx::{approx_metrics, finetune_approx, hit_ratio, recall_at, ApproxHead, ApproxMetrics, FinetuneOutput, Labelled};
pub use efficiency::{bench_efficiency, synthetic_workload, EfficiencyReport};
pub use retrieval::{
    mean_rank, mean_rank_from_embeddings, odd_even_split, perturb_bench, robustness_sweep, write_csv, Embedder,
    Perturbation, RetrievalBench, SweepRow,
};
