use std::hint::black_box;

use cirkit_core::dataset::tokenize;
use cirkit_core::model::{Example, ModelDims, ParamSet};
use cirkit_core::trainer::{loss_and_grad, text_pair_loss_and_grad, LossWeights};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sentence(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| format!("w{}", rng.random_range(0..300))).collect::<Vec<_>>().join(" ")
}

fn steps(c: &mut Criterion) {
    let dims = ModelDims::default();
    let p = ParamSet::init(dims, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch: Vec<Example> = (0..32)
        .map(|_| {
            let mut img = || (0..dims.image_dims).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (reference, target) = (img(), img());
            Example {
                reference,
                target,
                modification: tokenize(&sentence(&mut rng, 4), dims.vocab),
                supervision: Some(tokenize(&sentence(&mut rng, 68), dims.vocab)),
            }
        })
        .collect();
    let w = LossWeights::default();
    c.bench_function("stage2_step/batch32", |b| {
        b.iter(|| loss_and_grad(black_box(&p), &batch, &w).unwrap())
    });

    let pairs: Vec<_> = (0..32)
        .map(|_| {
            (
                tokenize(&sentence(&mut rng, 10), dims.vocab),
                tokenize(&sentence(&mut rng, 6), dims.vocab),
            )
        })
        .collect();
    c.bench_function("stage1_step/batch32", |b| {
        b.iter(|| text_pair_loss_and_grad(black_box(&p), &pairs, 0.07).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = steps
}
criterion_main!(benches);
