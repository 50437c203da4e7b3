use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fmo_bench::{disc_scene, random_stack};
use fmo_core::energy::{energy_gradient, energy_total, EnergyWeights};
use fmo_core::ncc::{maxncc, DEFAULT_PAD_FRACTION};
use fmo_core::solver::init_streak;

fn energy(c: &mut Criterion) {
    let mut group = c.benchmark_group("energy");
    for canvas in [32usize, 64] {
        let s = disc_scene(canvas, 24);
        let stack = init_streak(&s.input, &s.background, 8, 0).unwrap();
        let w = EnergyWeights::default();
        group.bench_with_input(BenchmarkId::new("total", canvas), &stack, |b, st| {
            b.iter(|| energy_total(black_box(st), &s.input, &s.background, &w, None).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("gradient", canvas), &stack, |b, st| {
            b.iter(|| energy_gradient(black_box(st), &s.input, &s.background, &w).unwrap())
        });
    }
    group.finish();
}

fn ncc(c: &mut Criterion) {
    let stack = random_stack(1, 64, 64, 2);
    c.bench_function("maxncc_64", |b| {
        b.iter(|| maxncc(black_box(stack.get(0)), black_box(stack.get(1)), DEFAULT_PAD_FRACTION).unwrap())
    });
}

criterion_group!(benches, energy, ncc);
criterion_main!(benches);
