use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use starsec::baselines::{beamformer, random_star_coeffs, BaselineKind};
use starsec::graphnn::{loss_and_grad, perfect_samples, LossVariant};
use starsec::quantize::{quantize_model, FixedPointFormat};
use starsec::secrecy::{evaluate, Strategy};
use starsec_bench::desk_fixture;

fn forward(c: &mut Criterion) {
    let fx = desk_fixture(32);
    let p = fx.scenario.p_max;
    let graph = fx.model.graph(&fx.channels[0]).unwrap();
    c.bench_function("forward/single", |b| {
        b.iter(|| fx.model.forward(black_box(&graph), p).unwrap())
    });
    c.bench_function("forward/batch32", |b| {
        b.iter(|| fx.model.infer(black_box(&fx.channels), p).unwrap())
    });
    let q = quantize_model(&fx.model, FixedPointFormat::new(16, 8).unwrap()).unwrap();
    c.bench_function("forward/batch32_q16_8", |b| {
        b.iter(|| q.infer(black_box(&fx.channels), p).unwrap())
    });
}

fn train_step(c: &mut Criterion) {
    let fx = desk_fixture(32);
    let p = fx.scenario.p_max;
    let samples = perfect_samples(&fx.model, &fx.channels).unwrap();
    c.bench_function("train/loss_and_grad_b32", |b| {
        b.iter(|| loss_and_grad(&fx.model, black_box(&samples), p, LossVariant::Clamped).unwrap())
    });
}

fn secrecy(c: &mut Criterion) {
    let fx = desk_fixture(1);
    let ch = &fx.channels[0];
    let p = fx.scenario.p_max;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let coeffs = random_star_coeffs(ch.l(), &mut rng).unwrap();
    let bf = beamformer(BaselineKind::Mrt, ch, &coeffs, p).unwrap();
    c.bench_function("secrecy/evaluate_an", |b| {
        b.iter(|| evaluate(black_box(ch), &coeffs, &bf.w, Strategy::An).unwrap())
    });
    c.bench_function("baseline/mmse", |b| {
        b.iter_batched(
            || random_star_coeffs(ch.l(), &mut rng).unwrap(),
            |cf| beamformer(BaselineKind::Mmse, ch, &cf, p).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, forward, train_step, secrecy);
criterion_main!(benches);
