use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fmo_bench::{disc_scene, random_image, random_stack};
use fmo_core::formation::{compose_blatting, compose_subframes, compose_superres, BlurKernel};
use fmo_core::synth::{rasterize_object, ObjectSpec, Pose};

fn formation(c: &mut Criterion) {
    let stack = random_stack(2, 64, 64, 24);
    let bg = random_image(3, 64, 64, 3);
    c.bench_function("compose_subframes_64_n24", |b| {
        b.iter(|| compose_subframes(black_box(&stack), &bg).unwrap())
    });
    c.bench_function("compose_superres_64_l8", |b| {
        b.iter(|| compose_superres(black_box(&stack), &bg, 8, 1.0).unwrap())
    });
    let r = stack.get(0);
    let kernel = BlurKernel::new((0..24).map(|i| (i, i / 3, 1.0 / 24.0))).unwrap();
    let f = r.premultiplied();
    c.bench_function("compose_blatting_64_24taps", |b| {
        b.iter(|| compose_blatting(black_box(&f), &r.m, &kernel, &bg).unwrap())
    });
}

fn synth(c: &mut Criterion) {
    let obj = ObjectSpec::disc(8.0, [1.0; 3]);
    let pose = Pose {
        center: [32.0, 32.0],
        scale: 1.1,
        angle_deg: 10.0,
    };
    c.bench_function("rasterize_disc_r8", |b| {
        b.iter(|| rasterize_object(black_box(&obj), pose, (64, 64)).unwrap())
    });
    c.bench_function("render_disc_scene_64_n24", |b| b.iter(|| disc_scene(black_box(64), 24)));
}

criterion_group!(benches, formation, synth);
criterion_main!(benches);
