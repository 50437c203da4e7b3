//! Forward image-formation operators.
//!
//! `compose_subframes` is the temporal-integration model over a stored
//! rendering stack, `compose_blatting`/`compose_piecewise` are the classical
//! blur-kernel formulations it generalizes, and `compose_instant` /
//! `compose_exposure` produce zero- or partial-exposure frames for temporal
//! super-resolution.

use crate::error::{Error, Result};
use crate::image::{Image, RenderingStack};

/// Integration samples per exposure interval.
pub const EXPOSURE_SAMPLES: usize = 5;

/// Unclamped `(1/N)·Σ F_i·M_i + (1 − (1/N)·Σ M_i)·B`.
///
/// Sub-frames are accumulated in mirrored pairs `(i, N−1−i)`, so the result
/// is bit-identical for a stack and its time reversal.
pub fn composite_unclamped(stack: &RenderingStack, bg: &Image) -> Result<Image> {
    check_background(stack, bg)?;
    let n = stack.len();
    let rs = stack.renderings();
    let mut fm = vec![0.0; bg.data().len()];
    let mut m_sum = vec![0.0; bg.pixel_count()];
    for i in 0..n.div_ceil(2) {
        let j = n - 1 - i;
        let (fa, ma) = (rs[i].f.data(), rs[i].m.data());
        if i == j {
            for p in 0..m_sum.len() {
                m_sum[p] += ma[p];
                for c in 0..3 {
                    fm[3 * p + c] += fa[3 * p + c] * ma[p];
                }
            }
        } else {
            let (fb, mb) = (rs[j].f.data(), rs[j].m.data());
            for p in 0..m_sum.len() {
                m_sum[p] += ma[p] + mb[p];
                for c in 0..3 {
                    let k = 3 * p + c;
                    fm[k] += fa[k] * ma[p] + fb[k] * mb[p];
                }
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    let b = bg.data();
    for p in 0..m_sum.len() {
        let keep = 1.0 - m_sum[p] * inv_n;
        for c in 0..3 {
            fm[3 * p + c] = fm[3 * p + c] * inv_n + keep * b[3 * p + c];
        }
    }
    Image::new(bg.width(), bg.height(), 3, fm)
}

/// Blurred frame formed by integrating the whole stack over the exposure.
pub fn compose_subframes(stack: &RenderingStack, bg: &Image) -> Result<Image> {
    Ok(clamp(composite_unclamped(stack, bg)?))
}

/// Zero-exposure frame at time `t`, linearly interpolating `F` and `M`
/// between the two nearest stack times.
pub fn compose_instant(stack: &RenderingStack, bg: &Image, t: f64) -> Result<Image> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    check_background(stack, bg)?;
    let n = stack.len();
    if n == 1 {
        return Ok(blend(stack, bg, 0, 1.0, 0.0));
    }
    let pos = t * (n - 1) as f64;
    let i0 = (pos.floor() as usize).min(n - 2);
    let frac = pos - i0 as f64;
    Ok(blend(stack, bg, i0, 1.0 - frac, frac))
}

/// Instant composite from sub-frames `i0` and `i0 + 1` with interpolation
/// weights `w0` and `w1`.
fn blend(stack: &RenderingStack, bg: &Image, i0: usize, w0: f64, w1: f64) -> Image {
    let r0 = stack.get(i0);
    let r1 = stack.get((i0 + 1).min(stack.len() - 1));
    let b = bg.data();
    let mut out = vec![0.0; b.len()];
    for p in 0..bg.pixel_count() {
        let m = w0 * r0.m.data()[p] + w1 * r1.m.data()[p];
        for c in 0..3 {
            let i = 3 * p + c;
            let f = w0 * r0.f.data()[i] + w1 * r1.f.data()[i];
            out[i] = (f * m + (1.0 - m) * b[i]).clamp(0.0, 1.0);
        }
    }
    Image::new(bg.width(), bg.height(), 3, out).expect("blend of finite images is finite")
}

/// Frame `k` of an `l`-fold temporal super-resolution with exposure fraction
/// `epsilon`, integrated over `[k/l, (k+ε)/l]` with a 5-point midpoint rule.
///
/// Sample positions are computed in stack-index units as `num / den` with
/// `num`, `den` exact for `ε = 1`, which makes frame `k` of a stack
/// bit-identical to frame `l−1−k` of its reversal.
pub fn compose_exposure(
    stack: &RenderingStack,
    bg: &Image,
    l: usize,
    epsilon: f64,
    k: usize,
) -> Result<Image> {
    if l == 0 || k >= l {
        return Err(Error::InvalidArgument(format!("frame index {k} invalid for l = {l}")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "exposure fraction {epsilon} outside (0, 1]"
        )));
    }
    check_background(stack, bg)?;
    let n = stack.len();
    let samples = EXPOSURE_SAMPLES as f64;
    let den = samples * l as f64;
    let frames: Vec<Image> = (0..EXPOSURE_SAMPLES)
        .map(|j| {
            if n == 1 {
                return blend(stack, bg, 0, 1.0, 0.0);
            }
            let span = (n - 1) as f64;
            let num = (span * (samples * k as f64 + (j as f64 + 0.5) * epsilon)).min(span * den);
            let i0 = ((num / den).floor() as usize).min(n - 2);
            let rem = num - i0 as f64 * den;
            blend(stack, bg, i0, (den - rem) / den, rem / den)
        })
        .collect();
    // mirrored pairs again: (s0 + s4) + (s1 + s3) + s2
    let mut acc = vec![0.0; bg.data().len()];
    for j in 0..EXPOSURE_SAMPLES.div_ceil(2) {
        let jj = EXPOSURE_SAMPLES - 1 - j;
        if j == jj {
            acc.iter_mut().zip(frames[j].data()).for_each(|(a, v)| *a += v);
        } else {
            acc.iter_mut()
                .zip(frames[j].data().iter().zip(frames[jj].data()))
                .for_each(|(a, (u, v))| *a += u + v);
        }
    }
    acc.iter_mut().for_each(|a| *a /= samples);
    Image::new(bg.width(), bg.height(), 3, acc).map(clamp)
}

/// All `l` frames of a temporal super-resolution.
pub fn compose_superres(
    stack: &RenderingStack,
    bg: &Image,
    l: usize,
    epsilon: f64,
) -> Result<Vec<Image>> {
    (0..l).map(|k| compose_exposure(stack, bg, l, epsilon, k)).collect()
}

fn check_background(stack: &RenderingStack, bg: &Image) -> Result<()> {
    if bg.channels() != 3 {
        return Err(Error::InvalidImage(format!(
            "background must have 3 channels, got {}",
            bg.channels()
        )));
    }
    stack.ensure_fits(bg, "stack vs background")
}

fn clamp(mut img: Image) -> Image {
    img.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

/// Sparse blur kernel with integer offsets and non-negative weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    taps: Vec<Tap>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub dx: i64,
    pub dy: i64,
    pub weight: f64,
}

impl BlurKernel {
    pub fn new(taps: impl IntoIterator<Item = (i64, i64, f64)>) -> Result<Self> {
        let taps: Vec<Tap> = taps
            .into_iter()
            .map(|(dx, dy, weight)| Tap { dx, dy, weight })
            .collect();
        if let Some(t) = taps.iter().find(|t| !(t.weight >= 0.0 && t.weight.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "kernel weight {} must be finite and non-negative",
                t.weight
            )));
        }
        Ok(BlurKernel { taps })
    }

    pub fn delta() -> Self {
        BlurKernel {
            taps: vec![Tap {
                dx: 0,
                dy: 0,
                weight: 1.0,
            }],
        }
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn weight_sum(&self) -> f64 {
        self.taps.iter().map(|t| t.weight).sum()
    }

    /// `(H∗X)(p) = Σ w·X(p − d)` with zeros outside the image.
    pub fn convolve(&self, img: &Image) -> Image {
        let (w, h, ch) = (img.width() as i64, img.height() as i64, img.channels());
        let mut out = vec![0.0; img.data().len()];
        let src = img.data();
        for tap in &self.taps {
            for y in 0..h {
                let sy = y - tap.dy;
                if sy < 0 || sy >= h {
                    continue;
                }
                let x_lo = tap.dx.max(0);
                let x_hi = (w + tap.dx).min(w);
                for x in x_lo..x_hi {
                    let (o, s) = (((y * w + x) as usize) * ch, ((sy * w + x - tap.dx) as usize) * ch);
                    for c in 0..ch {
                        out[o + c] += tap.weight * src[s + c];
                    }
                }
            }
        }
        Image::new(img.width(), img.height(), ch, out).expect("convolution keeps values finite")
    }
}

const KERNEL_NORM_TOL: f64 = 1e-9;

/// Classical blatting model `I = H∗F + (1 − H∗M)·B`.
pub fn compose_blatting(f: &Image, m: &Image, kernel: &BlurKernel, bg: &Image) -> Result<Image> {
    let sum = kernel.weight_sum();
    if (sum - 1.0).abs() > KERNEL_NORM_TOL {
        return Err(Error::InvalidArgument(format!("blur kernel sums to {sum}, expected 1")));
    }
    compose_parts(&[(f, m, kernel)], bg)
}

/// Piecewise-constant appearance model: `I = Σ H_i∗F_i + (1 − Σ H_i∗M_i)·B`
/// where the kernels jointly sum to one.
pub fn compose_piecewise(parts: &[(&Image, &Image, &BlurKernel)], bg: &Image) -> Result<Image> {
    if parts.is_empty() {
        return Err(Error::Empty("piecewise parts"));
    }
    let sum: f64 = parts.iter().map(|(_, _, k)| k.weight_sum()).sum();
    if (sum - 1.0).abs() > KERNEL_NORM_TOL {
        return Err(Error::InvalidArgument(format!(
            "piecewise kernels sum to {sum}, expected 1"
        )));
    }
    compose_parts(parts, bg)
}

fn compose_parts(parts: &[(&Image, &Image, &BlurKernel)], bg: &Image) -> Result<Image> {
    if bg.channels() != 3 {
        return Err(Error::InvalidImage("background must have 3 channels".into()));
    }
    let mut fg = vec![0.0; bg.data().len()];
    let mut alpha = vec![0.0; bg.pixel_count()];
    for (f, m, kernel) in parts {
        if f.channels() != 3 || m.channels() != 1 {
            return Err(Error::InvalidImage(
                "blatting needs a 3-channel appearance and 1-channel mask".into(),
            ));
        }
        f.ensure_same_size(bg, "appearance vs background")?;
        m.ensure_same_size(bg, "mask vs background")?;
        let hf = kernel.convolve(f);
        let hm = kernel.convolve(m);
        fg.iter_mut().zip(hf.data()).for_each(|(a, v)| *a += v);
        alpha.iter_mut().zip(hm.data()).for_each(|(a, v)| *a += v);
    }
    let b = bg.data();
    for p in 0..alpha.len() {
        for c in 0..3 {
            let i = 3 * p + c;
            fg[i] = (fg[i] + (1.0 - alpha[p]) * b[i]).clamp(0.0, 1.0);
        }
    }
    Image::new(bg.width(), bg.height(), 3, fg)
}
