//! Per-image recovery of a rendering stack from `(I, B)` by projected
//! gradient descent with momentum on the self-supervised energy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{energy_gradient_with_shifts, energy_total, EnergyBreakdown, EnergyWeights, StackGradient};
use crate::error::{Error, Result};
use crate::formation::compose_superres;
use crate::image::{sub_frame_time, Image, Rendering, RenderingStack};
use crate::ncc::Shift;

/// Gain applied to the difference image when initializing masks.
pub const INIT_GAIN: f64 = 3.0;
pub const INIT_NOISE: f64 = 0.01;
/// Difference-mask level above which a pixel counts as streak support.
const SUPPORT_LEVEL: f64 = 0.25;
/// Step halvings tried before an iteration is given up as rejected.
pub const MAX_HALVINGS: u32 = 30;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Every sub-frame starts as the whole difference region.
    Difference,
    /// The difference region is cut into `n` windows along its principal
    /// axis, one per sub-frame.
    #[default]
    Streak,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub n_subframes: usize,
    pub max_iters: usize,
    pub step: f64,
    pub momentum: f64,
    pub rel_tol: f64,
    pub patience: usize,
    pub seed: u64,
    pub weights: EnergyWeights,
    pub init: InitMode,
    /// Re-search the time-term shifts every this many iterations; `0`
    /// freezes them at their initial values.
    pub shift_refresh: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n_subframes: 8,
            max_iters: 500,
            step: 0.05,
            momentum: 0.9,
            rel_tol: 1e-6,
            patience: 10,
            seed: 0,
            weights: EnergyWeights::default(),
            init: InitMode::default(),
            shift_refresh: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subframes < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_subframes must be at least 2, got {}",
                self.n_subframes
            )));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {}", self.step)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("rel_tol must be >= 0, got {}", self.rel_tol)));
        }
        self.weights.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub stack: RenderingStack,
    /// Energy of the initial stack followed by the energy after every
    /// iteration.
    pub history: Vec<EnergyBreakdown>,
    pub iterations_run: usize,
    pub converged: bool,
}

fn check_pair(input: &Image, bg: &Image) -> Result<()> {
    input.ensure_same_shape(bg, "input vs background")?;
    if input.channels() != 3 {
        return Err(Error::InvalidArgument("input and background must have 3 channels".into()));
    }
    Ok(())
}

/// `clamp(INIT_GAIN·max_c |I − B|, 0, 1)` per pixel.
pub fn difference_mask(input: &Image, bg: &Image) -> Result<Image> {
    check_pair(input, bg)?;
    let data = input
        .data()
        .chunks_exact(3)
        .zip(bg.data().chunks_exact(3))
        .map(|(a, b)| {
            let d = (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max);
            (INIT_GAIN * d).clamp(0.0, 1.0)
        })
        .collect();
    Image::new(input.width(), input.height(), 1, data)
}

fn add_mask_noise(masks: &mut [Image], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for m in masks {
        for v in m.data_mut() {
            *v = (*v + rng.random_range(-INIT_NOISE..=INIT_NOISE)).clamp(0.0, 1.0);
        }
    }
}

/// Every sub-frame gets the difference mask and the input as appearance,
/// with seeded uniform noise on the masks.
pub fn init_stack(input: &Image, bg: &Image, n: usize, seed: u64) -> Result<RenderingStack> {
    if n == 0 {
        return Err(Error::Empty("sub-frame count"));
    }
    let m = difference_mask(input, bg)?;
    let mut masks = vec![m; n];
    add_mask_noise(&mut masks, seed);
    RenderingStack::new(masks.into_iter().map(|m| Rendering::new(input.clone(), m)).collect::<Result<_>>()?)
}

/// Extent of the difference region along its principal axis.
struct Streak {
    center: [f64; 2],
    axis: [f64; 2],
    lo: f64,
    hi: f64,
    width: f64,
}

impl Streak {
    fn measure(mask: &Image) -> Option<Streak> {
        let w = mask.width();
        let (mut s, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for (p, &m) in mask.data().iter().enumerate() {
            s += m;
            sx += m * (p % w) as f64;
            sy += m * (p / w) as f64;
        }
        if s < 1.0 {
            return None;
        }
        let c = [sx / s, sy / s];
        let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
        for (p, &m) in mask.data().iter().enumerate() {
            let (dx, dy) = ((p % w) as f64 - c[0], (p / w) as f64 - c[1]);
            cxx += m * dx * dx;
            cxy += m * dx * dy;
            cyy += m * dy * dy;
        }
        let angle = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
        let axis = [angle.cos(), angle.sin()];
        let (mut lo, mut hi, mut plo, mut phi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (p, &m) in mask.data().iter().enumerate() {
            if m < SUPPORT_LEVEL {
                continue;
            }
            let (dx, dy) = ((p % w) as f64 - c[0], (p / w) as f64 - c[1]);
            let along = dx * axis[0] + dy * axis[1];
            let across = -dx * axis[1] + dy * axis[0];
            lo = lo.min(along);
            hi = hi.max(along);
            plo = plo.min(across);
            phi = phi.max(across);
        }
        (lo <= hi).then(|| Streak {
            center: c,
            axis,
            // pixel centers to pixel edges
            lo: lo - 0.5,
            hi: hi + 0.5,
            width: (phi - plo + 1.0).min(hi - lo + 1.0),
        })
    }
}

/// Splits the difference region into `n` overlapping windows of the streak
/// width, evenly spaced along the streak, and fits the appearance to the
/// input under the resulting mean coverage.
pub fn init_streak(input: &Image, bg: &Image, n: usize, seed: u64) -> Result<RenderingStack> {
    if n == 0 {
        return Err(Error::Empty("sub-frame count"));
    }
    let base = difference_mask(input, bg)?;
    let Some(streak) = Streak::measure(&base) else {
        return init_stack(input, bg, n, seed);
    };
    let (w, h) = (input.width(), input.height());
    let travel = (streak.hi - streak.lo - streak.width).max(0.0);
    let half = streak.width / 2.0;
    let mut masks = (0..n)
        .map(|i| {
            let mid = streak.lo + half + sub_frame_time(i, n) * travel;
            Image::from_fn(w, h, 1, |x, y, px| {
                let cx = streak.center[0] + mid * streak.axis[0];
                let cy = streak.center[1] + mid * streak.axis[1];
                let gate = (half + 0.5 - (x as f64 - cx).hypot(y as f64 - cy)).clamp(0.0, 1.0);
                px[0] = gate * (2.0 * base.get(x, y, 0)).min(1.0);
            })
        })
        .collect::<Result<Vec<_>>>()?;
    add_mask_noise(&mut masks, seed);
    let coverage: Vec<f64> = (0..w * h)
        .map(|p| masks.iter().map(|m| m.data()[p]).sum::<f64>() / n as f64)
        .collect();
    let f = Image::from_fn(w, h, 3, |x, y, px| {
        let a = coverage[y * w + x];
        for c in 0..3 {
            let i = input.get(x, y, c);
            px[c] = if a > 0.05 {
                ((i - (1.0 - a) * bg.get(x, y, c)) / a).clamp(0.0, 1.0)
            } else {
                i
            };
        }
    })?;
    RenderingStack::new(masks.into_iter().map(|m| Rendering::new(f.clone(), m)).collect::<Result<_>>()?)
}

fn initial_stack(input: &Image, bg: &Image, cfg: &SolverConfig) -> Result<RenderingStack> {
    match cfg.init {
        InitMode::Difference => init_stack(input, bg, cfg.n_subframes, cfg.seed),
        InitMode::Streak => init_streak(input, bg, cfg.n_subframes, cfg.seed),
    }
}

pub fn solve(input: &Image, bg: &Image, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    check_pair(input, bg)?;
    let init = initial_stack(input, bg, cfg)?;
    solve_from(input, bg, init, cfg)
}

/// Runs the descent from a given stack; `cfg.n_subframes` and `cfg.init`
/// are ignored.
pub fn solve_from(input: &Image, bg: &Image, init: RenderingStack, cfg: &SolverConfig) -> Result<SolveResult> {
    let probe = SolverConfig {
        n_subframes: cfg.n_subframes.max(2),
        ..cfg.clone()
    };
    probe.validate()?;
    check_pair(input, bg)?;
    init.ensure_fits(input, "initial stack vs input")?;
    let weights = &cfg.weights;
    // The energy averages over sub-frames and pixels, so raw gradients
    // scale like 1/(N·|D|); this brings steps back to unit scale.
    let precond = (init.len() * input.pixel_count()) as f64;

    let mut x = init;
    let mut energy = energy_total(&x, input, bg, weights, None)?;
    let mut history = vec![energy];
    let mut velocity: Option<StackGradient> = None;
    let mut shifts: Option<Vec<Shift>> = None;
    let mut stalled = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;

    while iterations < cfg.max_iters {
        let refresh = match cfg.shift_refresh {
            0 => shifts.is_none(),
            k => iterations.is_multiple_of(k),
        };
        let fixed = if refresh { None } else { shifts.as_deref() };
        let (_, grad, used) = energy_gradient_with_shifts(&x, input, bg, weights, fixed)?;
        shifts = Some(used);
        let v = match velocity.take() {
            Some(mut v) => {
                blend(&mut v, &grad, cfg.momentum, precond);
                v
            }
            None => {
                let mut v = grad;
                for img in v.df.iter_mut().chain(v.dm.iter_mut()) {
                    img.data_mut().iter_mut().for_each(|a| *a *= precond);
                }
                v
            }
        };
        iterations += 1;

        let mut step = cfg.step;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = project_step(&x, &v, step)?;
            let e = energy_total(&candidate, input, bg, weights, None)?;
            if e.total <= energy.total {
                accepted = Some((candidate, e));
                break;
            }
            step *= 0.5;
        }
        let previous = energy.total;
        match accepted {
            Some((candidate, e)) => {
                x = candidate;
                energy = e;
                velocity = Some(v);
            }
            // momentum restarts from the plain gradient next time
            None => velocity = None,
        }
        history.push(energy);

        let decrease = if previous > 0.0 {
            (previous - energy.total) / previous
        } else {
            0.0
        };
        if decrease < cfg.rel_tol {
            stalled += 1;
            if stalled >= cfg.patience {
                converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }

    Ok(SolveResult {
        stack: x,
        history,
        iterations_run: iterations,
        converged,
    })
}

/// `v ← momentum·v + precond·g`.
fn blend(v: &mut StackGradient, g: &StackGradient, momentum: f64, precond: f64) {
    for (img, gi) in v.df.iter_mut().chain(v.dm.iter_mut()).zip(g.df.iter().chain(&g.dm)) {
        for (a, b) in img.data_mut().iter_mut().zip(gi.data()) {
            *a = momentum * *a + precond * b;
        }
    }
}

fn project_step(x: &RenderingStack, v: &StackGradient, step: f64) -> Result<RenderingStack> {
    let renderings = x
        .renderings()
        .iter()
        .zip(v.df.iter().zip(&v.dm))
        .map(|(r, (df, dm))| {
            let upd = |img: &Image, d: &Image| {
                let data = img
                    .data()
                    .iter()
                    .zip(d.data())
                    .map(|(a, g)| (a - step * g).clamp(0.0, 1.0))
                    .collect();
                Image::new(img.width(), img.height(), img.channels(), data)
            };
            Rendering::new(upd(&r.f, df)?, upd(&r.m, dm)?)
        })
        .collect::<Result<Vec<_>>>()?;
    RenderingStack::new(renderings)
}

/// Solves, then renders `l` frames of exposure fraction `epsilon`.
pub fn solve_superres(input: &Image, bg: &Image, cfg: &SolverConfig, l: usize, epsilon: f64) -> Result<Vec<Image>> {
    let result = solve(input, bg, cfg)?;
    compose_superres(&result.stack, bg, l, epsilon)
}
