//! Self-verification suite behind `fmo check`: analytic gradients against
//! finite differences, formation-model equivalences, metric oracles and
//! time-reversal invariance.

use std::time::Instant;

use fmo_core::energy::{
    energy_gradient, loss_appearance, loss_image, loss_sharp, loss_time, EnergyBreakdown, EnergyWeights,
    StackGradient,
};
use fmo_core::formation::{compose_blatting, compose_piecewise, compose_subframes, BlurKernel};
use fmo_core::image::{Image, Rendering, RenderingStack};
use fmo_core::metrics::{evaluate, psnr, ssim, tiou, Trajectory, TrajectoryPoint};
use fmo_core::ncc::{max_shift, maxncc, DEFAULT_PAD_FRACTION};
use fmo_core::oracle;
use fmo_core::synth::sample_scene;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRADIENT_STACKS: usize = 20;
pub const FD_STEP: f64 = 1e-4;
pub const FD_EXCLUSION: f64 = 1e-3;
pub const FD_TOLERANCE: f64 = 1e-3;

/// Deliberate defects for exercising the suite's failure path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Flips the sign of the sharpness-term gradient.
    SharpGradientSign,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub family: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckOutcome {
    pub fn label(&self) -> String {
        format!("{}/{}", self.family, self.name)
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {} ({:.2}s)", self.label(), self.detail, self.seconds)
    }
}

fn run(family: &'static str, name: &'static str, body: impl FnOnce() -> (bool, String)) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = body();
    CheckOutcome {
        family,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn rand_img(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
    Image::new(w, h, c, (0..w * h * c).map(|_| rng.random::<f64>()).collect()).expect("finite")
}

fn rand_stack(rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> RenderingStack {
    let r = (0..n)
        .map(|_| Rendering::new(rand_img(rng, w, h, 3), rand_img(rng, w, h, 1)).expect("shapes"))
        .collect();
    RenderingStack::new(r).expect("nonempty")
}

type GradResult = fmo_core::Result<(EnergyBreakdown, StackGradient)>;

fn gradient_with_fault(fault: Fault) -> impl Fn(&RenderingStack, &Image, &Image, &EnergyWeights) -> GradResult {
    move |stack, input, bg, w| {
        let (e, mut g) = energy_gradient(stack, input, bg, w)?;
        if fault == Fault::SharpGradientSign {
            let only_sharp = EnergyWeights {
                sharp: w.sharp,
                ..EnergyWeights::zero()
            };
            let (_, gs) = energy_gradient(stack, input, bg, &only_sharp)?;
            for (a, b) in g.dm.iter_mut().zip(&gs.dm) {
                for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x -= 2.0 * y;
                }
            }
        }
        Ok((e, g))
    }
}

/// Analytic gradient against central differences on random 16×16, N = 4
/// problems, away from L1 kinks and entropy clamps.
pub fn check_gradients(fault: Fault, stacks: usize) -> CheckOutcome {
    run("gradients", "finite-differences", || {
        let grad = gradient_with_fault(fault);
        let (mut worst, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
        let mut where_ = String::new();
        for seed in 0..stacks as u64 {
            let (stack, input, bg) = oracle::random_problem(seed, 16, 16, 4);
            let r = oracle::check_gradient(&stack, &input, &bg, &EnergyWeights::default(), FD_STEP, FD_EXCLUSION, &grad);
            checked += r.checked;
            skipped += r.skipped;
            if r.max_rel_error > worst {
                worst = r.max_rel_error;
                where_ = format!("stack {seed} {}", r.worst);
            }
        }
        (
            worst <= FD_TOLERANCE,
            format!(
                "max rel err {worst:.3e} (tol {FD_TOLERANCE:e}, h {FD_STEP:e}) over {checked} entries in {stacks} stacks, {skipped} excluded; worst at {where_}"
            ),
        )
    })
}

/// Sub-frame composite of integer translates against the blatting model.
pub fn check_blatting(objects: usize) -> CheckOutcome {
    run("formation", "blatting-equivalence", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xb1a7);
        let mut worst = 0.0f64;
        for _ in 0..objects {
            let (w, h) = (rng.random_range(12..24), rng.random_range(12..24));
            let n = rng.random_range(2..9);
            let color = [rng.random::<f64>(), rng.random(), rng.random()];
            let (cx, cy, rad) = (w as f64 / 2.0, h as f64 / 2.0, rng.random_range(2.0..5.0));
            let m = Image::from_fn(w, h, 1, |x, y, px| {
                let d = (x as f64 - cx).hypot(y as f64 - cy);
                px[0] = (rad + 0.5 - d).clamp(0.0, 1.0);
            })
            .expect("finite");
            let f = Image::from_fn(w, h, 3, |_, _, px| px.copy_from_slice(&color)).expect("finite");
            let base = Rendering::new(f, m).expect("shapes");
            let mut offsets = vec![(0i64, 0i64)];
            for _ in 1..n {
                let (dx, dy) = *offsets.last().unwrap();
                offsets.push((dx + rng.random_range(0..3), dy + rng.random_range(-1..2)));
            }
            let stack = RenderingStack::new(
                offsets
                    .iter()
                    .map(|&(dx, dy)| {
                        let k = BlurKernel::new([(dx, dy, 1.0)]).expect("tap");
                        Rendering::new(k.convolve(&base.f), k.convolve(&base.m)).expect("shapes")
                    })
                    .collect(),
            )
            .expect("nonempty");
            let kernel = BlurKernel::new(offsets.iter().map(|&(dx, dy)| (dx, dy, 1.0 / n as f64))).expect("taps");
            let bg = rand_img(&mut rng, w, h, 3);
            let a = compose_subframes(&stack, &bg).expect("composite");
            let b = compose_blatting(&base.premultiplied(), &base.m, &kernel, &bg).expect("blatting");
            worst = worst.max(a.max_abs_diff(&b));
        }
        (worst <= 1e-9, format!("max abs diff {worst:.3e} (tol 1e-9) over {objects} objects"))
    })
}

/// A stack constant on each of two blocks against the per-block kernel sum.
pub fn check_piecewise() -> CheckOutcome {
    run("formation", "piecewise-equivalence", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9c);
        let (w, h) = (20, 14);
        let bg = rand_img(&mut rng, w, h, 3);
        let blocks: Vec<(Rendering, Vec<(i64, i64)>)> = (0..2)
            .map(|b| {
                let r = Rendering::new(rand_img(&mut rng, w, h, 3), rand_img(&mut rng, w, h, 1)).expect("shapes");
                (r, (0..3).map(|i| (3 * b + i, i - 1)).collect())
            })
            .collect();
        let n = 6.0;
        let mut frames = Vec::new();
        for (r, offs) in &blocks {
            for &(dx, dy) in offs {
                let k = BlurKernel::new([(dx, dy, 1.0)]).expect("tap");
                frames.push(Rendering::new(k.convolve(&r.f), k.convolve(&r.m)).expect("shapes"));
            }
        }
        let stack = RenderingStack::new(frames).expect("nonempty");
        let kernels: Vec<BlurKernel> = blocks
            .iter()
            .map(|(_, o)| BlurKernel::new(o.iter().map(|&(dx, dy)| (dx, dy, 1.0 / n))).expect("taps"))
            .collect();
        let premult: Vec<Image> = blocks.iter().map(|(r, _)| r.premultiplied()).collect();
        let parts: Vec<(&Image, &Image, &BlurKernel)> = blocks
            .iter()
            .zip(&premult)
            .zip(&kernels)
            .map(|(((r, _), f), k)| (f, &r.m, k))
            .collect();
        let a = compose_subframes(&stack, &bg).expect("composite");
        let b = compose_piecewise(&parts, &bg).expect("piecewise");
        let d = a.max_abs_diff(&b);
        (d <= 1e-9, format!("max abs diff {d:.3e} (tol 1e-9), 2 blocks of 3 sub-frames"))
    })
}

pub fn check_psnr() -> CheckOutcome {
    run("metrics", "psnr-closed-form", || {
        let a = Image::filled(16, 16, 3, 0.3).expect("finite");
        let b = Image::filled(16, 16, 3, 0.4).expect("finite");
        let v = psnr(&a, &b).expect("shapes");
        let e = (v - 20.0).abs();
        (e <= 1e-9, format!("uniform diff 0.1 gives {v:.12} dB, |err| {e:.3e} (tol 1e-9)"))
    })
}

pub fn check_ssim(pairs: usize) -> CheckOutcome {
    run("metrics", "ssim-oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x55);
        let mut worst = 0.0f64;
        for _ in 0..pairs {
            let (w, h) = (rng.random_range(11..24), rng.random_range(11..24));
            let a = rand_img(&mut rng, w, h, 3);
            let b = a.map(|v| (v + 0.2 * (v - 0.5)).clamp(0.0, 1.0));
            let b = Image::new(w, h, 3, b.data().iter().map(|v| (v + 0.1 * rng.random::<f64>()).min(1.0)).collect()).expect("finite");
            worst = worst.max((ssim(&a, &b).expect("size") - oracle::ssim(&a, &b)).abs());
        }
        let z = Image::zeros(16, 16, 1).expect("finite");
        let o = Image::filled(16, 16, 1, 1.0).expect("finite");
        let c1 = 1e-4;
        let closed = (ssim(&z, &o).expect("size") - c1 / (1.0 + c1)).abs();
        (
            worst <= 1e-9 && closed <= 1e-9,
            format!("max |ssim - windowed oracle| {worst:.3e} over {pairs} pairs; constant-image closed form err {closed:.3e} (tol 1e-9)"),
        )
    })
}

pub fn check_tiou(pairs: usize) -> CheckOutcome {
    run("metrics", "tiou-raster-oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x710);
        let r = 4.0;
        let mut worst = 0.0f64;
        for _ in 0..pairs {
            let pts = |rng: &mut ChaCha8Rng, base: &[[f64; 2]]| -> Vec<[f64; 2]> {
                base.iter()
                    .map(|p| [p[0] + rng.random_range(-5.0..5.0), p[1] + rng.random_range(-5.0..5.0)])
                    .collect()
            };
            let base: Vec<[f64; 2]> = (0..5).map(|i| [10.0 + 4.0 * i as f64, 10.0 + 2.0 * i as f64]).collect();
            let (g, e) = (pts(&mut rng, &base), pts(&mut rng, &base));
            let traj = |p: &[[f64; 2]]| {
                Trajectory::new(
                    p.iter()
                        .enumerate()
                        .map(|(i, q)| TrajectoryPoint {
                            t: i as f64 / 4.0,
                            pos: Some(*q),
                        })
                        .collect(),
                    Some(r),
                )
                .expect("times")
            };
            let got = tiou(&traj(&e), &traj(&g)).expect("nonempty");
            let raster: f64 = g
                .iter()
                .zip(&e)
                .map(|(a, b)| oracle::disc_iou_raster(a[0], a[1], b[0], b[1], r, 100))
                .sum::<f64>()
                / 5.0;
            worst = worst.max((got - raster).abs());
        }
        (worst <= 1e-3, format!("max |tiou - raster oracle| {worst:.3e} over {pairs} trajectory pairs (tol 1e-3)"))
    })
}

pub fn check_maxncc(pairs: usize) -> CheckOutcome {
    run("metrics", "maxncc-exhaustive-oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0cc);
        let (mut worst, mut shift_mismatch) = (0.0f64, 0usize);
        for k in 0..pairs {
            let (w, h) = (rng.random_range(10..26), rng.random_range(10..26));
            let a = Rendering::new(rand_img(&mut rng, w, h, 3), rand_img(&mut rng, w, h, 1)).expect("shapes");
            // every other pair is a translate of the first, some beyond the window
            let b = if k % 2 == 0 {
                Rendering::new(rand_img(&mut rng, w, h, 3), rand_img(&mut rng, w, h, 1)).expect("shapes")
            } else {
                let (dx, dy) = (rng.random_range(-4..5), rng.random_range(-4..5));
                let t = BlurKernel::new([(dx, dy, 1.0)]).expect("tap");
                Rendering::new(t.convolve(&a.f), t.convolve(&a.m)).expect("shapes")
            };
            // the ±10% bound, computed independently of the library
            let bx = ((0.1 * w as f64) - 1e-9).ceil() as i64;
            let by = ((0.1 * h as f64) - 1e-9).ceil() as i64;
            let (v, dx, dy) = oracle::maxncc(&a, &b, bx, by);
            let got = maxncc(&a, &b, DEFAULT_PAD_FRACTION).expect("shapes");
            worst = worst.max((got.value - v).abs());
            let in_window = got.shift.dx.abs() <= max_shift(w, DEFAULT_PAD_FRACTION).min(bx)
                && got.shift.dy.abs() <= max_shift(h, DEFAULT_PAD_FRACTION).min(by);
            if !in_window || (got.value - v).abs() <= 1e-12 && (got.shift.dx, got.shift.dy) != (dx, dy) {
                shift_mismatch += 1;
            }
        }
        (
            worst <= 1e-9 && shift_mismatch == 0,
            format!("max |maxncc - oracle| {worst:.3e} (tol 1e-9) over {pairs} pairs, {shift_mismatch} shift disagreements"),
        )
    })
}

/// Losses must be bit-identical on reversed stacks; evaluation must give
/// the same values with the direction tag flipped.
pub fn check_reversal(stacks: usize) -> CheckOutcome {
    run("reversal", "losses-and-evaluate", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x2e7);
        let mut failures = Vec::new();
        let sample = sample_scene(11, (32, 32), 8).expect("sample");
        for k in 0..stacks {
            let n = rng.random_range(2..7);
            let est = rand_stack(&mut rng, 32, 32, n);
            let gt = rand_stack(&mut rng, 32, 32, n);
            let rev = est.reversed();
            let (input, bg) = (&sample.input, &sample.background);
            let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
            let la = loss_appearance(&est, &gt, 0.0).expect("sizes").value;
            let lb = loss_appearance(&rev, &gt.reversed(), 0.0).expect("sizes").value;
            if !same(la, lb) {
                failures.push(format!("stack {k}: appearance"));
            }
            if !same(loss_time(&est).expect("n >= 2"), loss_time(&rev).expect("n >= 2")) {
                failures.push(format!("stack {k}: time"));
            }
            if !same(loss_sharp(&est), loss_sharp(&rev)) {
                failures.push(format!("stack {k}: sharp"));
            }
            if !same(loss_image(&est, input, bg).expect("sizes"), loss_image(&rev, input, bg).expect("sizes")) {
                failures.push(format!("stack {k}: image"));
            }
            let a = evaluate(&est, &sample, 8, 1.0).expect("evaluate");
            let b = evaluate(&rev, &sample, 8, 1.0).expect("evaluate");
            let values_equal = same(a.psnr_db, b.psnr_db)
                && same(a.ssim, b.ssim)
                && a.tiou.map(f64::to_bits) == b.tiou.map(f64::to_bits)
                && a.per_subframe == b.per_subframe;
            if !values_equal || a.direction != b.direction.flipped() {
                failures.push(format!("stack {k}: evaluate ({} vs {})", a.direction, b.direction));
            }
        }
        (
            failures.is_empty(),
            if failures.is_empty() {
                format!("4 losses and evaluate reversal-exact on {stacks} random stacks")
            } else {
                format!("violations: {}", failures.join("; "))
            },
        )
    })
}

/// Runs the whole suite.
pub fn cmd_check(fault: Fault) -> Vec<CheckOutcome> {
    vec![
        check_gradients(fault, GRADIENT_STACKS),
        check_blatting(50),
        check_piecewise(),
        check_psnr(),
        check_ssim(5),
        check_tiou(10),
        check_maxncc(10),
        check_reversal(20),
    ]
}
