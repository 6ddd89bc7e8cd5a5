use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cqrf::quantile::solve;
use cqrf::{beran_forest, estimate_uncorrected, forest_weights, predict_batch, ForestConfig, SurvivalKind};
use cqrf_bench::{aft_data, aft_queries, fitted};

fn per_query(c: &mut Criterion) {
    let mut group = c.benchmark_group("query");
    for n in [1000usize, 4000, 16000] {
        let d = aft_data(n, 20);
        let forest = fitted(&d, &ForestConfig::quantile(200, 20, 1));
        let x = aft_queries(1, 20).remove(0);
        group.bench_with_input(BenchmarkId::new("weights", n), &x, |b, x| {
            b.iter(|| forest_weights(&forest, x).unwrap())
        });
        let w = forest_weights(&forest, &x).unwrap();
        group.bench_with_input(BenchmarkId::new("beran_and_solve", n), &w, |b, w| {
            b.iter(|| solve(&beran_forest(&d, w), w, d.y(), 0.9).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("uncorrected", n), &x, |b, x| {
            b.iter(|| estimate_uncorrected(&forest, &d, x, 0.9).unwrap())
        });
    }
    group.finish();
}

fn batch(c: &mut Criterion) {
    let d = aft_data(2000, 20);
    let forest = fitted(&d, &ForestConfig::generalized(500, 20, 1));
    let queries = aft_queries(200, 20);
    let mut group = c.benchmark_group("batch");
    group.sample_size(10);
    group.bench_function("predict_200x3", |b| {
        b.iter(|| predict_batch(&forest, &d, &queries, &[0.1, 0.5, 0.9], Some(SurvivalKind::BeranForest)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, per_query, batch);
criterion_main!(benches);
