// SPDX-License-Identifier: MIT OR Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use red_core::harness::{ChannelSplitTask, TaskParams};
use red_core::model::{generate, Sampler};
use red_core::oracle::{certify_optimality, closed_form_optimal, random_pair, RewardSpec};
use red_core::{
    red_combine, red_logits, softmax, step_distribution, Context, Logits, PolicySpec, TinyConfig,
    TinyTransformer, TokenId,
};

fn random_logits(rng: &mut ChaCha8Rng, n: usize) -> Logits {
    Logits::new((0..n).map(|_| rng.random_range(-10.0..10.0)).collect()).unwrap()
}

fn combine(c: &mut Criterion) {
    let mut group = c.benchmark_group("combine");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for vocab in [32, 1024, 32_000] {
        let (p_x, p_r) = random_pair(&mut rng, vocab);
        group.bench_with_input(BenchmarkId::new("red_combine", vocab), &vocab, |b, _| {
            b.iter(|| red_combine(black_box(&p_x), black_box(&p_r), 1.0).unwrap())
        });
        let (a, r) = (random_logits(&mut rng, vocab), random_logits(&mut rng, vocab));
        group.bench_with_input(BenchmarkId::new("red_logits", vocab), &vocab, |b, _| {
            b.iter(|| red_logits(black_box(&a), black_box(&r), 0.5).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("softmax", vocab), &vocab, |b, _| {
            b.iter(|| softmax(black_box(&a)).unwrap())
        });
    }
    group.finish();
}

fn decoding(c: &mut Criterion) {
    let task = ChannelSplitTask::generate(TaskParams {
        instances: 64,
        ..TaskParams::default()
    })
    .unwrap();
    let ctx = task.context(0, 0);
    let red = PolicySpec::red(1.0);
    c.bench_function("step_distribution/table", |b| {
        b.iter(|| step_distribution(&task.model, black_box(&ctx), &red).unwrap())
    });
    c.bench_function("generate/table", |b| {
        b.iter(|| generate(&task.model, black_box(&ctx), &red, 2, &mut Sampler::greedy()).unwrap())
    });

    let model = TinyTransformer::new(TinyConfig::default()).unwrap();
    let ids = |v: &[u32]| v.iter().map(|&t| TokenId(t)).collect::<Vec<_>>();
    let tctx = Context::new(ids(&[10, 11]))
        .with_image(ids(&[3, 4, 5, 6, 14, 15]))
        .with_rationale(ids(&[7, 8, 9, 16, 17, 18]));
    c.bench_function("generate/transformer", |b| {
        b.iter(|| generate(&model, black_box(&tctx), &red, 4, &mut Sampler::greedy()).unwrap())
    });
    c.bench_function("trace/transformer", |b| b.iter(|| model.trace(black_box(&tctx)).unwrap()));
}

fn oracle(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (p_x, p_r) = random_pair(&mut rng, 16);
    let spec = RewardSpec::rationale_grounding(&p_r, 1.0).unwrap();
    let star = closed_form_optimal(&p_x, &spec).unwrap();
    c.bench_function("certify_optimality/1000", |b| {
        b.iter(|| certify_optimality(&star, &p_x, &spec, 1000, 1e-9, 0).unwrap())
    });
}

criterion_group!(benches, combine, decoding, oracle);
criterion_main!(benches);
