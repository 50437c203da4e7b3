//! Fixtures shared by the benchmarks.

use fmo_core::image::{Image, Rendering, RenderingStack};
use fmo_core::synth::{make_background, BackgroundKind, ObjectSpec, SceneSpec, SynthSample, TrajectorySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(seed: u64, w: usize, h: usize, channels: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(w, h, channels, (0..w * h * channels).map(|_| rng.random::<f64>()).collect()).expect("finite")
}

pub fn random_stack(seed: u64, w: usize, h: usize, n: usize) -> RenderingStack {
    let renderings = (0..n as u64)
        .map(|i| {
            Rendering::new(random_image(seed ^ (2 * i), w, h, 3), random_image(seed ^ (2 * i + 1), w, h, 1))
                .expect("shapes")
        })
        .collect();
    RenderingStack::new(renderings).expect("nonempty")
}

/// White disc of radius 8 moving 24 px over a dark textured background.
pub fn disc_scene(canvas: usize, n: usize) -> SynthSample {
    let c = canvas as f64 / 2.0;
    let spec = SceneSpec {
        object: ObjectSpec::disc(8.0, [1.0; 3]),
        trajectory: TrajectorySpec::translation([c - 11.0, c - 5.0], [22.0, 10.0]),
        background: BackgroundKind::Noise { cell: 10.0, octaves: 3 },
        seed: 3,
    };
    let bg = make_background(spec.seed, (canvas, canvas), &spec.background)
        .expect("background")
        .map(|v| 0.3 * v);
    SynthSample::render_on("bench", spec, bg, n).expect("scene")
}
