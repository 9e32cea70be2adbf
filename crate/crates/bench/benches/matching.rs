use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mapforge_bench::{cost_matrix, matching_problem};
use mapforge_core::matching::{hierarchical_match, hungarian};
use mapforge_core::FocalParams;

fn bench_hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    for n in [10, 50, 100, 200] {
        let m = cost_matrix(n, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| b.iter(|| hungarian(m).unwrap()));
    }
    group.finish();
}

fn bench_hierarchical(c: &mut Criterion) {
    let mut group = c.benchmark_group("hierarchical_match");
    let focal = FocalParams::default();
    for n in [50, 100] {
        let (preds, gts, slots) = matching_problem(n, 2);
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| hierarchical_match(&preds, &gts, &slots, &focal).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_hungarian, bench_hierarchical);
criterion_main!(benches);
