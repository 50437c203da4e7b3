use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fmo_bench::disc_scene;
use fmo_core::solver::{solve, SolverConfig};

fn solver(c: &mut Criterion) {
    let s = disc_scene(64, 24);
    let cfg = SolverConfig {
        max_iters: 10,
        ..SolverConfig::default()
    };
    let mut group = c.benchmark_group("solver");
    group.sample_size(10);
    group.bench_function("ten_iterations_64_n8", |b| {
        b.iter(|| solve(black_box(&s.input), &s.background, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, solver);
criterion_main!(benches);
