use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use trajsim_bench::walk;
use trajsim_core::measures::{edr, edwp, frechet_discrete, hausdorff, pairwise_matrix, MatchMetric};
use trajsim_core::Measure;

fn pairs(c: &mut Criterion) {
    let mut g = c.benchmark_group("measure");
    for len in [50, 200] {
        let (a, b) = (walk(len, 1), walk(len, 2));
        g.bench_with_input(BenchmarkId::new("hausdorff", len), &len, |bn, _| bn.iter(|| hausdorff(black_box(&a), &b)));
        g.bench_with_input(BenchmarkId::new("frechet", len), &len, |bn, _| {
            bn.iter(|| frechet_discrete(black_box(&a), &b))
        });
        g.bench_with_input(BenchmarkId::new("edr", len), &len, |bn, _| {
            bn.iter(|| edr(black_box(&a), &b, 100.0, MatchMetric::Euclidean))
        });
        g.bench_with_input(BenchmarkId::new("edwp", len), &len, |bn, _| bn.iter(|| edwp(black_box(&a), &b).unwrap()));
    }
    g.finish();
}

fn matrix(c: &mut Criterion) {
    let set: Vec<_> = (0..50).map(|s| walk(60, s)).collect();
    c.bench_function("pairwise_hausdorff_50x60", |b| {
        b.iter(|| pairwise_matrix(black_box(&set), &Measure::Hausdorff).unwrap())
    });
}

criterion_group!(benches, pairs, matrix);
criterion_main!(benches);
