use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use retune::ppr::{approximate_ppr, extract_cohesive_subgraph};
use retune::trainer::{accumulate_gradient, Adapter};
use retune_bench::{graph, index, rng, unit};

fn ppr(c: &mut Criterion) {
    let mut group = c.benchmark_group("ppr");
    for n in [200usize, 2_000, 20_000] {
        let w = graph(n, 2 * n, 1);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("power_iteration", n), &w, |b, w| {
            b.iter(|| approximate_ppr(w, black_box(&[0, n / 2]), 0.85, 1e-4).unwrap())
        });
        let apr = approximate_ppr(&w, &[0, n / 2], 0.85, 1e-4).unwrap();
        group.bench_with_input(BenchmarkId::new("cohesive_cut", n), &apr.values, |b, v| {
            b.iter(|| extract_cohesive_subgraph(black_box(v), 200, 1e-4))
        });
    }
    group.finish();
}

fn retrieval(c: &mut Criterion) {
    let mut group = c.benchmark_group("retrieval");
    let dim = 256;
    for rows in [1_000usize, 10_000] {
        let idx = index(rows, dim, 2);
        let q = unit(&mut rng(3), dim);
        let adapter = Adapter::identity(dim, 0.05, 0);
        group.throughput(Throughput::Elements(rows as u64));
        let base = idx.searcher(None).unwrap();
        let adapted = idx.searcher(Some(&adapter)).unwrap();
        group.bench_function(BenchmarkId::new("base_top5", rows), |b| {
            b.iter(|| base.search(black_box(&q), 5).unwrap())
        });
        group.bench_function(BenchmarkId::new("adapted_top5", rows), |b| {
            b.iter(|| adapted.search(black_box(&q), 5).unwrap())
        });
        group.bench_function(BenchmarkId::new("adapted_searcher_build", rows), |b| {
            b.iter(|| idx.searcher(Some(black_box(&adapter))).unwrap())
        });
    }
    group.finish();
}

fn infonce(c: &mut Criterion) {
    let mut group = c.benchmark_group("infonce_gradient");
    for dim in [64usize, 256] {
        let mut r = rng(4);
        let weights = Adapter::identity(dim, 0.05, 0).weights_f64();
        let q = unit(&mut r, dim);
        let cands: Vec<Vec<f32>> = (0..21).map(|_| unit(&mut r, dim)).collect();
        let refs: Vec<&[f32]> = cands.iter().map(Vec::as_slice).collect();
        let mut grad = vec![0.0; dim * dim];
        group.bench_function(BenchmarkId::new("one_example_21_candidates", dim), |b| {
            b.iter(|| accumulate_gradient(&weights, dim, black_box(&q), &refs, 0.05, 1.0, &mut grad))
        });
    }
    group.finish();
}

criterion_group!(benches, ppr, retrieval, infonce);
criterion_main!(benches);
