//! Maximum zero-normalized cross-correlation between two renderings over a
//! bounded window of integer translations.
//!
//! Each rendering is one joint 4-channel signal (`F` followed by `M`) with a
//! single mean and variance per shift, taken over the overlapping region.
//! Per-shift statistics are computed so that swapping the two renderings and
//! negating the shift reproduces the same value bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Rendering;

pub const DEFAULT_PAD_FRACTION: f64 = 0.10;
const DEGENERATE_VARIANCE: f64 = 1e-12;
const DEGENERATE_MEAN_GAP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shift {
    pub dx: i64,
    pub dy: i64,
}

impl Shift {
    pub const ZERO: Shift = Shift { dx: 0, dy: 0 };

    pub fn new(dx: i64, dy: i64) -> Self {
        Shift { dx, dy }
    }

    pub fn norm_sq(self) -> i64 {
        self.dx * self.dx + self.dy * self.dy
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NccMatch {
    pub value: f64,
    pub shift: Shift,
}

/// Largest shift magnitude along an axis of length `len`: `⌈pad·len⌉`,
/// never reaching the full length.
pub fn max_shift(len: usize, pad_fraction: f64) -> i64 {
    // the small offset keeps e.g. 0.1·30 = 3.0000000000000004 at 3
    let s = (pad_fraction * len as f64 - 1e-9).ceil().max(0.0) as i64;
    s.min(len as i64 - 1)
}

/// Shifts of the search window ordered by `|shift|²`, then `dx`, then `dy`;
/// scanning in this order and keeping only strict improvements implements
/// the tie-breaking rule.
pub fn search_window(width: usize, height: usize, pad_fraction: f64) -> Vec<Shift> {
    let (mx, my) = (max_shift(width, pad_fraction), max_shift(height, pad_fraction));
    let mut shifts: Vec<Shift> = (-my..=my)
        .flat_map(|dy| (-mx..=mx).map(move |dx| Shift { dx, dy }))
        .collect();
    shifts.sort_by_key(|s| (s.norm_sq(), s.dx, s.dy));
    shifts
}

pub fn maxncc(a: &Rendering, b: &Rendering, pad_fraction: f64) -> Result<NccMatch> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "maxncc: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if !(pad_fraction >= 0.0 && pad_fraction.is_finite()) {
        return Err(Error::InvalidArgument(format!("pad fraction {pad_fraction}")));
    }
    let window = search_window(a.width(), a.height(), pad_fraction);
    Ok(best_match(&Joint::new(a), &Joint::new(b), &window))
}

pub(crate) fn best_match(a: &Joint, b: &Joint, window: &[Shift]) -> NccMatch {
    let mut best = NccMatch {
        value: f64::NEG_INFINITY,
        shift: Shift::ZERO,
    };
    for &shift in window {
        let v = correlate(a, b, shift).value;
        if v > best.value {
            best = NccMatch { value: v, shift };
        }
    }
    best
}

/// A rendering viewed as a joint signal, with per-row prefix sums of the
/// per-pixel channel sums and squared sums.
pub(crate) struct Joint<'a> {
    w: usize,
    h: usize,
    f: &'a [f64],
    m: &'a [f64],
    row_s1: Vec<f64>,
    row_s2: Vec<f64>,
}

impl<'a> Joint<'a> {
    pub(crate) fn new(r: &'a Rendering) -> Self {
        let (w, h) = (r.width(), r.height());
        let (f, m) = (r.f.data(), r.m.data());
        let mut row_s1 = vec![0.0; h * (w + 1)];
        let mut row_s2 = vec![0.0; h * (w + 1)];
        for y in 0..h {
            let base = y * (w + 1);
            for x in 0..w {
                let p = y * w + x;
                let (f0, f1, f2, mv) = (f[3 * p], f[3 * p + 1], f[3 * p + 2], m[p]);
                row_s1[base + x + 1] = row_s1[base + x] + (f0 + f1 + f2 + mv);
                row_s2[base + x + 1] = row_s2[base + x] + (f0 * f0 + f1 * f1 + f2 * f2 + mv * mv);
            }
        }
        Joint {
            w,
            h,
            f,
            m,
            row_s1,
            row_s2,
        }
    }

    fn rect_sums(&self, x0: usize, x1: usize, y0: usize, y1: usize) -> (f64, f64) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for y in y0..y1 {
            let base = y * (self.w + 1);
            s1 += self.row_s1[base + x1] - self.row_s1[base + x0];
            s2 += self.row_s2[base + x1] - self.row_s2[base + x0];
        }
        (s1, s2)
    }
}

/// Overlap of `a(x, y)` with `b(x + dx, y + dy)`, in `a` coordinates.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Overlap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

impl Overlap {
    fn new(w: usize, h: usize, s: Shift) -> Option<Self> {
        let (w, h) = (w as i64, h as i64);
        let x0 = (-s.dx).max(0);
        let x1 = (w - s.dx).min(w);
        let y0 = (-s.dy).max(0);
        let y1 = (h - s.dy).min(h);
        (x0 < x1 && y0 < y1).then(|| Overlap {
            x0: x0 as usize,
            x1: x1 as usize,
            y0: y0 as usize,
            y1: y1 as usize,
        })
    }

    fn count(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Correlation {
    pub value: f64,
    overlap: Option<Overlap>,
    mean_a: f64,
    mean_b: f64,
    saa: f64,
    sbb: f64,
    degenerate: bool,
}

pub(crate) fn correlate(a: &Joint, b: &Joint, s: Shift) -> Correlation {
    let Some(ov) = Overlap::new(a.w, a.h, s) else {
        return Correlation {
            value: 0.0,
            overlap: None,
            mean_a: 0.0,
            mean_b: 0.0,
            saa: 0.0,
            sbb: 0.0,
            degenerate: true,
        };
    };
    let bx0 = (ov.x0 as i64 + s.dx) as usize;
    let by0 = (ov.y0 as i64 + s.dy) as usize;
    let cols = ov.x1 - ov.x0;
    let rows = ov.y1 - ov.y0;
    let (sa, saa_raw) = a.rect_sums(ov.x0, ov.x1, ov.y0, ov.y1);
    let (sb, sbb_raw) = b.rect_sums(bx0, bx0 + cols, by0, by0 + rows);

    let mut sab = 0.0;
    for r in 0..rows {
        let pa0 = (ov.y0 + r) * a.w + ov.x0;
        let pb0 = (by0 + r) * b.w + bx0;
        let fa = &a.f[3 * pa0..3 * (pa0 + cols)];
        let fb = &b.f[3 * pb0..3 * (pb0 + cols)];
        let ma = &a.m[pa0..pa0 + cols];
        let mb = &b.m[pb0..pb0 + cols];
        for x in 0..cols {
            let k = 3 * x;
            sab += fa[k] * fb[k] + fa[k + 1] * fb[k + 1] + fa[k + 2] * fb[k + 2] + ma[x] * mb[x];
        }
    }

    let n = (4 * ov.count()) as f64;
    let (mean_a, mean_b) = (sa / n, sb / n);
    let saa = (saa_raw - sa * sa / n).max(0.0);
    let sbb = (sbb_raw - sb * sb / n).max(0.0);
    let sab = sab - sa * sb / n;
    let (deg_a, deg_b) = (saa / n < DEGENERATE_VARIANCE, sbb / n < DEGENERATE_VARIANCE);
    let value = match (deg_a, deg_b) {
        (true, true) => {
            if (mean_a - mean_b).abs() < DEGENERATE_MEAN_GAP {
                1.0
            } else {
                0.0
            }
        }
        (true, false) | (false, true) => 0.0,
        (false, false) => (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0),
    };
    Correlation {
        value,
        overlap: Some(ov),
        mean_a,
        mean_b,
        saa,
        sbb,
        degenerate: deg_a || deg_b,
    }
}

/// Accumulates `scale · ∂ncc/∂a` and `scale · ∂ncc/∂b` at a fixed shift into
/// the appearance/mask gradient buffers of both renderings.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_gradient(
    a: &Joint,
    b: &Joint,
    s: Shift,
    corr: &Correlation,
    scale: f64,
    (ga_f, ga_m): (&mut [f64], &mut [f64]),
    (gb_f, gb_m): (&mut [f64], &mut [f64]),
) {
    let Some(ov) = corr.overlap else { return };
    if corr.degenerate || scale == 0.0 {
        return;
    }
    let norm = (corr.saa * corr.sbb).sqrt();
    let v = corr.value;
    let bx0 = (ov.x0 as i64 + s.dx) as usize;
    let by0 = (ov.y0 as i64 + s.dy) as usize;
    let (ka, kb) = (scale * v / corr.saa, scale * v / corr.sbb);
    let kn = scale / norm;
    for r in 0..ov.y1 - ov.y0 {
        for x in 0..ov.x1 - ov.x0 {
            let pa = (ov.y0 + r) * a.w + ov.x0 + x;
            let pb = (by0 + r) * b.w + bx0 + x;
            for c in 0..3 {
                let da = a.f[3 * pa + c] - corr.mean_a;
                let db = b.f[3 * pb + c] - corr.mean_b;
                ga_f[3 * pa + c] += kn * db - ka * da;
                gb_f[3 * pb + c] += kn * da - kb * db;
            }
            let da = a.m[pa] - corr.mean_a;
            let db = b.m[pb] - corr.mean_b;
            ga_m[pa] += kn * db - ka * da;
            gb_m[pb] += kn * da - kb * db;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::oracle;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rendering(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Rendering {
        let f = Image::new(w, h, 3, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap();
        let m = Image::new(w, h, 1, (0..w * h).map(|_| rng.random()).collect()).unwrap();
        Rendering::new(f, m).unwrap()
    }

    fn blob(w: usize, h: usize, cx: f64, cy: f64) -> Rendering {
        let m = Image::from_fn(w, h, 1, |x, y, px| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            px[0] = (-d2 / 8.0).exp();
        })
        .unwrap();
        let f = Image::from_fn(w, h, 3, |x, y, px| {
            let v = m.get(x, y, 0);
            px.copy_from_slice(&[v, 0.5 * v, (x as f64 / w as f64) * v]);
        })
        .unwrap();
        Rendering::new(f, m).unwrap()
    }

    fn translate(r: &Rendering, dx: i64, dy: i64) -> Rendering {
        let k = crate::formation::BlurKernel::new([(dx, dy, 1.0)]).unwrap();
        Rendering::new(k.convolve(&r.f), k.convolve(&r.m)).unwrap()
    }

    #[test]
    fn max_shift_rounds_up_without_float_creep() {
        assert_eq!(max_shift(64, 0.1), 7);
        assert_eq!(max_shift(30, 0.1), 3);
        assert_eq!(max_shift(16, 0.1), 2);
        assert_eq!(max_shift(3, 0.9), 2);
        assert_eq!(max_shift(10, 0.0), 0);
    }

    #[test]
    fn self_correlation_is_one_at_zero_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_rendering(&mut rng, 20, 20);
        let m = maxncc(&r, &r, 0.1).unwrap();
        assert!((m.value - 1.0).abs() < 1e-12);
        assert_eq!(m.shift, Shift::ZERO);
    }

    #[test]
    fn recovers_translation() {
        let a = blob(30, 24, 12.0, 11.0);
        let b = translate(&a, 3, 0);
        let m = maxncc(&a, &b, 0.1).unwrap();
        assert!((m.value - 1.0).abs() < 1e-12, "{m:?}");
        assert_eq!(m.shift, Shift::new(3, 0));
    }

    #[test]
    fn degenerate_signals() {
        let zero = Rendering::empty(10, 10).unwrap();
        let m = maxncc(&zero, &zero, 0.1).unwrap();
        assert_eq!(m.value, 1.0);
        assert_eq!(m.shift, Shift::ZERO);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_rendering(&mut rng, 10, 10);
        assert_eq!(maxncc(&zero, &r, 0.1).unwrap().value, 0.0);
        let ones = Rendering::new(
            Image::filled(10, 10, 3, 1.0).unwrap(),
            Image::filled(10, 10, 1, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(maxncc(&zero, &ones, 0.1).unwrap().value, 0.0);
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let a = random_rendering(&mut rng, 13, 11);
            let b = random_rendering(&mut rng, 13, 11);
            let m = maxncc(&a, &b, 0.1).unwrap();
            let (v, dx, dy) = oracle::maxncc(&a, &b, 2, 2);
            assert!((m.value - v).abs() <= 1e-9);
            assert_eq!(m.shift, Shift::new(dx, dy));
        }
    }

    proptest! {
        #[test]
        fn symmetric_in_arguments(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_rendering(&mut rng, 9, 8);
            let b = random_rendering(&mut rng, 9, 8);
            let ab = maxncc(&a, &b, 0.2).unwrap();
            let ba = maxncc(&b, &a, 0.2).unwrap();
            prop_assert_eq!(ab.value, ba.value);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_at_fixed_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_rendering(&mut rng, 7, 6);
        let b = random_rendering(&mut rng, 7, 6);
        let s = Shift::new(1, -1);
        let (ja, jb) = (Joint::new(&a), Joint::new(&b));
        let corr = correlate(&ja, &jb, s);
        let mut ga_f = vec![0.0; 7 * 6 * 3];
        let mut ga_m = vec![0.0; 7 * 6];
        let mut gb_f = vec![0.0; 7 * 6 * 3];
        let mut gb_m = vec![0.0; 7 * 6];
        accumulate_gradient(&ja, &jb, s, &corr, 1.0, (&mut ga_f, &mut ga_m), (&mut gb_f, &mut gb_m));
        let fd = oracle::central_differences(a.f.data(), 1e-5, |x| {
            let f = Image::new(7, 6, 3, x.to_vec()).unwrap();
            let r = Rendering::new(f, a.m.clone()).unwrap();
            correlate(&Joint::new(&r), &jb, s).value
        });
        for (g, d) in ga_f.iter().zip(&fd) {
            assert!((g - d).abs() < 1e-7, "{g} vs {d}");
        }
        let fd = oracle::central_differences(b.m.data(), 1e-5, |x| {
            let m = Image::new(7, 6, 1, x.to_vec()).unwrap();
            let r = Rendering::new(b.f.clone(), m).unwrap();
            correlate(&ja, &Joint::new(&r), s).value
        });
        for (g, d) in gb_m.iter().zip(&fd) {
            assert!((g - d).abs() < 1e-7, "{g} vs {d}");
        }
    }
}
