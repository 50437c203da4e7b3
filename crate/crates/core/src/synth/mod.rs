//! Procedural benchmark scenes: textured 2D sprites moved along linear
//! trajectories, rasterized into ground-truth stacks and composed into
//! blurred inputs.

mod dataset;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{read_dataset, write_dataset, MANIFEST_VERSION};

use crate::error::{Error, Result};
use crate::formation::compose_subframes;
use crate::image::{clamp01, load_png, sub_frame_time, Image, Rendering, RenderingStack};
use crate::metrics::{extract_trajectory, Trajectory};

/// Sub-frames per exposure unless configured otherwise.
pub const DEFAULT_SUBFRAMES: usize = 24;
/// Supersampling factor per axis used for coverage.
pub const SUPERSAMPLE: usize = 8;
pub const MAX_RESAMPLES: usize = 100;
pub const MAX_ROTATION_DEG: f64 = 30.0;
pub const MAX_SCALE_RATE: f64 = 1.2;
pub const MIN_CANVAS: usize = 32;

pub type Rgb = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Disc,
    /// Convex, counter-clockwise, unit scale.
    Polygon { vertices: Vec<[f64; 2]> },
}

/// Procedural pattern in object-local unit coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Texture {
    Uniform { color: Rgb },
    Stripes { colors: [Rgb; 2], period: f64, angle_deg: f64 },
    Checker { colors: [Rgb; 2], period: f64 },
    Radial { colors: [Rgb; 2], period: f64 },
}

impl Texture {
    fn colors(&self) -> &[Rgb] {
        match self {
            Texture::Uniform { color } => std::slice::from_ref(color),
            Texture::Stripes { colors, .. } | Texture::Checker { colors, .. } | Texture::Radial { colors, .. } => colors,
        }
    }

    fn period(&self) -> Option<f64> {
        match self {
            Texture::Uniform { .. } => None,
            Texture::Stripes { period, .. } | Texture::Checker { period, .. } | Texture::Radial { period, .. } => {
                Some(*period)
            }
        }
    }

    fn color_at(&self, q: [f64; 2]) -> Rgb {
        let parity = |k: f64| (k as i64).rem_euclid(2) == 0;
        match self {
            Texture::Uniform { color } => *color,
            Texture::Stripes { colors, period, angle_deg } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                colors[usize::from(!parity(((q[0] * c + q[1] * s) / period).floor()))]
            }
            Texture::Checker { colors, period } => {
                let k = (q[0] / period).floor() + (q[1] / period).floor();
                colors[usize::from(!parity(k))]
            }
            Texture::Radial { colors, period } => {
                let r = (q[0] * q[0] + q[1] * q[1]).sqrt();
                colors[usize::from(!parity((r / period).floor()))]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub texture: Texture,
    /// Radius in pixels.
    pub size: f64,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

impl ObjectSpec {
    pub fn disc(size: f64, color: Rgb) -> Self {
        ObjectSpec {
            shape: Shape::Disc,
            texture: Texture::Uniform { color },
            size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.size.is_finite() && self.size > 0.0) {
            return Err(Error::InvalidArgument(format!("object size must be positive, got {}", self.size)));
        }
        for c in self.texture.colors().iter().flatten() {
            if !(0.0..=1.0).contains(c) {
                return Err(Error::InvalidArgument(format!("texture color component {c} outside [0, 1]")));
            }
        }
        if let Some(p) = self.texture.period() {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::InvalidArgument(format!("texture period must be positive, got {p}")));
            }
        }
        if let Shape::Polygon { vertices } = &self.shape {
            let k = vertices.len();
            if !(3..=10).contains(&k) {
                return Err(Error::InvalidArgument(format!("polygon needs 3 to 10 vertices, got {k}")));
            }
            if vertices.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("polygon vertex is not finite".into()));
            }
            let area: f64 = (0..k).map(|j| cross([0.0, 0.0], vertices[j], vertices[(j + 1) % k])).sum::<f64>() / 2.0;
            let convex = (0..k).all(|j| cross(vertices[j], vertices[(j + 1) % k], vertices[(j + 2) % k]) >= 0.0);
            if !(area > 1e-9 && convex) {
                return Err(Error::InvalidArgument(
                    "polygon must be convex, counter-clockwise and of positive area".into(),
                ));
            }
        }
        Ok(())
    }

    /// Membership of a point in object-local unit coordinates.
    fn contains(&self, q: [f64; 2]) -> bool {
        match &self.shape {
            Shape::Disc => q[0] * q[0] + q[1] * q[1] <= 1.0,
            Shape::Polygon { vertices } => {
                let k = vertices.len();
                (0..k).all(|j| cross(vertices[j], vertices[(j + 1) % k], q) >= 0.0)
            }
        }
    }

    /// Largest distance of the shape from its origin at unit scale.
    fn extent(&self) -> f64 {
        match &self.shape {
            Shape::Disc => 1.0,
            Shape::Polygon { vertices } => vertices.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub center: [f64; 2],
    pub scale: f64,
    pub angle_deg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub start: [f64; 2],
    /// Pixels travelled over `t ∈ [0, 1]`.
    pub displacement: [f64; 2],
    /// Size multiplier reached at `t = 1`.
    pub scale_rate: f64,
    /// Total in-plane rotation in degrees.
    pub rotation_deg: f64,
}

impl TrajectorySpec {
    pub fn translation(start: [f64; 2], displacement: [f64; 2]) -> Self {
        TrajectorySpec {
            start,
            displacement,
            scale_rate: 1.0,
            rotation_deg: 0.0,
        }
    }

    pub fn pose_at(&self, t: f64) -> Pose {
        Pose {
            center: [
                self.start[0] + t * self.displacement[0],
                self.start[1] + t * self.displacement[1],
            ],
            scale: 1.0 + t * (self.scale_rate - 1.0),
            angle_deg: t * self.rotation_deg,
        }
    }

    pub fn displacement_len(&self) -> f64 {
        self.displacement[0].hypot(self.displacement[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackgroundKind {
    Uniform { color: Rgb },
    /// Horizontal ramp from `from` at `x = 0` to `to` at `x = w − 1`.
    Gradient { from: Rgb, to: Rgb },
    /// Smooth value noise; `cell` is the coarsest lattice spacing in pixels.
    Noise { cell: f64, octaves: u32 },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub object: ObjectSpec,
    pub trajectory: TrajectorySpec,
    pub background: BackgroundKind,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub input: Image,
    pub background: Image,
    pub gt_stack: RenderingStack,
    pub gt_traj: Trajectory,
    pub spec: SceneSpec,
}

impl SynthSample {
    /// Renders `spec` on a `canvas` with `n` sub-frames.
    pub fn render(id: impl Into<String>, spec: SceneSpec, canvas: (usize, usize), n: usize) -> Result<Self> {
        let background = make_background(spec.seed, canvas, &spec.background)?;
        Self::render_on(id, spec, background, n)
    }

    /// Renders `spec` over an explicit background image.
    pub fn render_on(id: impl Into<String>, spec: SceneSpec, background: Image, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("sub-frame count"));
        }
        if background.channels() != 3 {
            return Err(Error::InvalidArgument("background must have 3 channels".into()));
        }
        let canvas = (background.width(), background.height());
        let renderings = (0..n)
            .map(|i| rasterize_object(&spec.object, spec.trajectory.pose_at(sub_frame_time(i, n)), canvas))
            .collect::<Result<Vec<_>>>()?;
        let gt_stack = RenderingStack::new(renderings)?;
        let input = compose_subframes(&gt_stack, &background)?;
        let gt_traj = extract_trajectory(&gt_stack)?;
        Ok(SynthSample {
            id: id.into(),
            input,
            background,
            gt_stack,
            gt_traj,
            spec,
        })
    }

    pub fn width(&self) -> usize {
        self.input.width()
    }

    pub fn height(&self) -> usize {
        self.input.height()
    }
}

/// Coverage and texture of `obj` at `pose`, from `SUPERSAMPLE²` samples per
/// pixel. Pixel `(x, y)` spans `[x − ½, x + ½] × [y − ½, y + ½]`.
pub fn rasterize_object(obj: &ObjectSpec, pose: Pose, canvas: (usize, usize)) -> Result<Rendering> {
    obj.validate()?;
    let radius = obj.size * pose.scale;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidArgument(format!("object rendered at non-positive size {radius}")));
    }
    let (w, h) = canvas;
    let mut f = Image::zeros(w, h, 3)?;
    let mut m = Image::zeros(w, h, 1)?;
    let reach = radius * obj.extent() + 1.0;
    let range = |c: f64, len: usize| {
        let lo = (c - reach).floor().max(0.0) as usize;
        let hi = ((c + reach).ceil().max(-1.0) + 1.0).min(len as f64) as usize;
        lo..hi.max(lo)
    };
    let (sin, cos) = (-pose.angle_deg.to_radians()).sin_cos();
    let s = SUPERSAMPLE;
    let total = (s * s) as f64;
    for y in range(pose.center[1], h) {
        for x in range(pose.center[0], w) {
            let mut hits = 0usize;
            let mut rgb = [0.0; 3];
            for sy in 0..s {
                for sx in 0..s {
                    let px = x as f64 - 0.5 + (sx as f64 + 0.5) / s as f64 - pose.center[0];
                    let py = y as f64 - 0.5 + (sy as f64 + 0.5) / s as f64 - pose.center[1];
                    let q = [(cos * px - sin * py) / radius, (sin * px + cos * py) / radius];
                    if obj.contains(q) {
                        hits += 1;
                        let c = obj.texture.color_at(q);
                        rgb.iter_mut().zip(c).for_each(|(a, v)| *a += v);
                    }
                }
            }
            if hits > 0 {
                m.set(x, y, 0, hits as f64 / total);
                for (c, v) in rgb.iter().enumerate() {
                    f.set(x, y, c, v / hits as f64);
                }
            }
        }
    }
    Rendering::new(f, m)
}

fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

fn value_noise(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: f64) -> Vec<f64> {
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let gy = y as f64 / cell;
        let (iy, uy) = (gy.floor() as usize, smoothstep(gy.fract()));
        for x in 0..w {
            let gx = x as f64 / cell;
            let (ix, ux) = (gx.floor() as usize, smoothstep(gx.fract()));
            let at = |i: usize, j: usize| lattice[j * gw + i];
            let top = at(ix, iy) + ux * (at(ix + 1, iy) - at(ix, iy));
            let bot = at(ix, iy + 1) + ux * (at(ix + 1, iy + 1) - at(ix, iy + 1));
            out.push(top + uy * (bot - top));
        }
    }
    out
}

/// Deterministic 3-channel background in `[0, 1]`.
pub fn make_background(seed: u64, canvas: (usize, usize), kind: &BackgroundKind) -> Result<Image> {
    let (w, h) = canvas;
    let check = |c: &Rgb| {
        if c.iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("background color {c:?} outside [0, 1]")))
        }
    };
    match kind {
        BackgroundKind::Uniform { color } => {
            check(color)?;
            Image::from_fn(w, h, 3, |_, _, px| px.copy_from_slice(color))
        }
        BackgroundKind::Gradient { from, to } => {
            check(from)?;
            check(to)?;
            let denom = w.saturating_sub(1).max(1) as f64;
            Image::from_fn(w, h, 3, |x, _, px| {
                let u = x as f64 / denom;
                for c in 0..3 {
                    px[c] = from[c] + u * (to[c] - from[c]);
                }
            })
        }
        BackgroundKind::Noise { cell, octaves } => {
            if !(cell.is_finite() && *cell >= 1.0) || *octaves == 0 {
                return Err(Error::InvalidArgument("noise needs cell >= 1 and at least one octave".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut data = vec![0.0; w * h * 3];
            let mut norm = 0.0;
            for o in 0..*octaves {
                let amp = 0.5f64.powi(o as i32);
                norm += amp;
                let spacing = (cell / 2f64.powi(o as i32)).max(1.0);
                for c in 0..3 {
                    let plane = value_noise(&mut rng, w, h, spacing);
                    for (p, v) in plane.iter().enumerate() {
                        data[3 * p + c] += amp * v;
                    }
                }
            }
            data.iter_mut().for_each(|v| *v /= norm);
            Image::new(w, h, 3, data)
        }
        BackgroundKind::File { path } => {
            let img = load_png(path)?;
            if img.width() != w || img.height() != h {
                return Err(Error::dataset(
                    path,
                    format!("background is {}x{}, canvas is {w}x{h}", img.width(), img.height()),
                ));
            }
            match img.channels() {
                3 => Ok(img),
                4 => Image::from_fn(w, h, 3, |x, y, px| px.copy_from_slice(&img.pixel(x, y)[..3])),
                1 => Image::from_fn(w, h, 3, |x, y, px| px.fill(img.get(x, y, 0))),
                c => Err(Error::dataset(path, format!("unsupported channel count {c}"))),
            }
        }
    }
}

/// `count` copies of `base` under independent per-pixel multiplicative
/// jitter of relative size `jitter`, as seen in the frames preceding a shot.
pub fn jittered_frames(base: &Image, count: usize, jitter: f64, seed: u64) -> Result<Vec<Image>> {
    if !(0.0..1.0).contains(&jitter) {
        return Err(Error::InvalidArgument(format!("jitter must lie in [0, 1), got {jitter}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut noisy = base.clone();
            for v in noisy.data_mut() {
                *v *= 1.0 + jitter * (2.0 * rng.random::<f64>() - 1.0);
            }
            clamp01(&noisy)
        })
        .collect()
}

fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.random(), rng.random(), rng.random()]
}

fn random_polygon(rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let k = rng.random_range(3..=10);
    loop {
        let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let max_gap = (0..k)
            .map(|j| {
                let next = if j + 1 == k { angles[0] + std::f64::consts::TAU } else { angles[j + 1] };
                next - angles[j]
            })
            .fold(0.0, f64::max);
        // keeps the origin well inside, so the shape is not a sliver
        if max_gap < 0.8 * std::f64::consts::PI {
            return angles.iter().map(|a| [a.cos(), a.sin()]).collect();
        }
    }
}

fn random_object(rng: &mut ChaCha8Rng, canvas: (usize, usize)) -> ObjectSpec {
    let short = canvas.0.min(canvas.1) as f64;
    let size = rng.random_range(short / 16.0..=short / 7.0);
    let shape = if rng.random_bool(0.4) {
        Shape::Disc
    } else {
        Shape::Polygon {
            vertices: random_polygon(rng),
        }
    };
    let colors = [random_color(rng), random_color(rng)];
    let period = rng.random_range(0.25..0.6);
    let texture = match rng.random_range(0..4) {
        0 => Texture::Uniform { color: colors[0] },
        1 => Texture::Stripes {
            colors,
            period,
            angle_deg: rng.random_range(0.0..180.0),
        },
        2 => Texture::Checker { colors, period },
        _ => Texture::Radial { colors, period },
    };
    ObjectSpec { shape, texture, size }
}

/// Start position keeping the whole object on the canvas at both ends of
/// a linear trajectory, if one exists.
fn feasible_start(rng: &mut ChaCha8Rng, canvas: (usize, usize), reach: f64, d: [f64; 2]) -> Option<[f64; 2]> {
    let mut start = [0.0; 2];
    for (axis, len) in [canvas.0, canvas.1].into_iter().enumerate() {
        let lo = reach.max(reach - d[axis]);
        let hi = (len as f64 - 1.0 - reach).min(len as f64 - 1.0 - reach - d[axis]);
        if lo > hi {
            return None;
        }
        start[axis] = rng.random_range(lo..=hi);
    }
    Some(start)
}

fn random_background(rng: &mut ChaCha8Rng, canvas: (usize, usize)) -> BackgroundKind {
    match rng.random_range(0..3) {
        0 => BackgroundKind::Uniform {
            color: random_color(rng),
        },
        1 => BackgroundKind::Gradient {
            from: random_color(rng),
            to: random_color(rng),
        },
        _ => BackgroundKind::Noise {
            cell: canvas.0.min(canvas.1) as f64 / rng.random_range(2.0..6.0),
            octaves: rng.random_range(1..=3),
        },
    }
}

/// Draws an object and a trajectory that stays on the canvas.
pub fn sample_spec(seed: u64, canvas: (usize, usize)) -> Result<SceneSpec> {
    if canvas.0 < MIN_CANVAS || canvas.1 < MIN_CANVAS {
        return Err(Error::InvalidArgument(format!(
            "canvas must be at least {MIN_CANVAS}x{MIN_CANVAS}, got {}x{}",
            canvas.0, canvas.1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_RESAMPLES {
        let object = random_object(&mut rng, canvas);
        let len = rng.random_range(0.5..=2.0) * 2.0 * object.size;
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let displacement = [len * heading.cos(), len * heading.sin()];
        let scale_rate = rng.random_range(1.0..=MAX_SCALE_RATE);
        let rotation_deg = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        // half a pixel of margin so no coverage falls off the edge
        let reach = object.size * object.extent() * scale_rate + 0.5;
        let Some(start) = feasible_start(&mut rng, canvas, reach, displacement) else {
            continue;
        };
        let background = random_background(&mut rng, canvas);
        return Ok(SceneSpec {
            object,
            trajectory: TrajectorySpec {
                start,
                displacement,
                scale_rate,
                rotation_deg,
            },
            background,
            seed,
        });
    }
    Err(Error::InvalidArgument(format!(
        "no trajectory fitting a {}x{} canvas after {MAX_RESAMPLES} attempts",
        canvas.0, canvas.1
    )))
}

/// Random benchmark instance; the id is the zero-padded seed.
pub fn sample_scene(seed: u64, canvas: (usize, usize), n_subframes: usize) -> Result<SynthSample> {
    let spec = sample_spec(seed, canvas)?;
    SynthSample::render(format!("{seed:06}"), spec, canvas, n_subframes)
}
