use std::collections::HashSet;
use std::hint::black_box;

use cirkit_core::metrics::{map_at_k, recall_at_k};
use cirkit_core::retrieval::GalleryIndex;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn index(n: usize, d: usize, rng: &mut ChaCha8Rng) -> GalleryIndex {
    let ids = (0..n).map(|i| format!("img{i:06}")).collect();
    let values = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    GalleryIndex::from_rows(d, ids, values).unwrap()
}

fn search(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("search_topk");
    for n in [1_000, 10_000, 100_000] {
        let idx = index(n, 32, &mut rng);
        let q: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| idx.search_topk(black_box(&q), 50).unwrap())
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ranks: Vec<usize> = (0..4_000).map(|_| rng.random_range(1..1_000)).collect();
    c.bench_function("recall_at_k/4000", |b| b.iter(|| recall_at_k(black_box(&ranks), 10).unwrap()));

    let lists: Vec<Vec<String>> = (0..1_000)
        .map(|_| (0..50).map(|_| format!("i{}", rng.random_range(0..500))).collect())
        .collect();
    let gts: Vec<HashSet<String>> = (0..1_000)
        .map(|_| (0..4).map(|_| format!("i{}", rng.random_range(0..500))).collect())
        .collect();
    c.bench_function("map_at_k/1000x50", |b| b.iter(|| map_at_k(black_box(&lists), &gts, 50).unwrap()));
}

criterion_group!(benches, search, metrics);
criterion_main!(benches);
