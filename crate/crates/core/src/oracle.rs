//! Brute-force reference implementations.
//!
//! Everything here is written as plain scalar loops over the definitions and
//! shares no code with the optimized paths it is used to verify. The test
//! suites and the `check` command compare against these.

use crate::image::{Image, Rendering, RenderingStack};

/// Per-pixel summation of the sub-frame composite, clamped.
pub fn compose_subframes(stack: &RenderingStack, bg: &Image) -> Image {
    let n = stack.len() as f64;
    let (w, h) = (bg.width(), bg.height());
    let mut out = Image::zeros(w, h, 3).unwrap();
    for y in 0..h {
        for x in 0..w {
            let mut msum = 0.0;
            for r in stack.renderings() {
                msum += r.m.get(x, y, 0);
            }
            for c in 0..3 {
                let mut fm = 0.0;
                for r in stack.renderings() {
                    fm += r.f.get(x, y, c) * r.m.get(x, y, 0);
                }
                let v = fm / n + (1.0 - msum / n) * bg.get(x, y, c);
                out.set(x, y, c, v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// `(1/|O|)·Σ_p ‖A(p) − B(p)‖₁·O(p)` by double loop.
pub fn l1_masked(a: &Image, b: &Image, o: Option<&Image>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let wgt = o.map_or(1.0, |o| o.get(x, y, 0));
            let mut d = 0.0;
            for c in 0..a.channels() {
                d += (a.get(x, y, c) - b.get(x, y, c)).abs();
            }
            num += d * wgt;
            den += wgt;
        }
    }
    num / den
}

/// Maximum zero-normalized cross-correlation of the joint `F‖M` signal over
/// every integer shift in `[-max_dx, max_dx] × [-max_dy, max_dy]`, with a
/// two-pass mean/variance per shift. Returns `(value, dx, dy)`.
pub fn maxncc(a: &Rendering, b: &Rendering, max_dx: i64, max_dy: i64) -> (f64, i64, i64) {
    let (w, h) = (a.width() as i64, a.height() as i64);
    let joint = |r: &Rendering, x: i64, y: i64, c: usize| -> f64 {
        if c < 3 {
            r.f.get(x as usize, y as usize, c)
        } else {
            r.m.get(x as usize, y as usize, 0)
        }
    };
    let mut shifts = Vec::new();
    for dy in -max_dy..=max_dy {
        for dx in -max_dx..=max_dx {
            shifts.push((dx, dy));
        }
    }
    shifts.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dx, dy));
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for (dx, dy) in shifts {
        let mut pa = Vec::new();
        let mut pb = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let (xb, yb) = (x + dx, y + dy);
                if xb < 0 || yb < 0 || xb >= w || yb >= h {
                    continue;
                }
                for c in 0..4 {
                    pa.push(joint(a, x, y, c));
                    pb.push(joint(b, xb, yb, c));
                }
            }
        }
        if pa.is_empty() {
            continue;
        }
        let n = pa.len() as f64;
        let ma = pa.iter().sum::<f64>() / n;
        let mb = pb.iter().sum::<f64>() / n;
        let va = pa.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
        let vb = pb.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
        let value = if va < 1e-12 && vb < 1e-12 {
            if (ma - mb).abs() < 1e-9 {
                1.0
            } else {
                0.0
            }
        } else if va < 1e-12 || vb < 1e-12 {
            0.0
        } else {
            let cov = pa.iter().zip(&pb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
            cov / (va * vb).sqrt()
        };
        if value > best.0 {
            best = (value, dx, dy);
        }
    }
    best
}

pub fn psnr(a: &Image, b: &Image) -> f64 {
    let mut se = 0.0;
    let mut count = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            for c in 0..a.channels() {
                se += (a.get(x, y, c) - b.get(x, y, c)).powi(2);
                count += 1;
            }
        }
    }
    let mse = se / count as f64;
    if mse == 0.0 {
        100.0
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Windowed SSIM evaluated directly at every valid 11×11 window center.
pub fn ssim(a: &Image, b: &Image) -> f64 {
    const R: usize = 5;
    let sigma: f64 = 1.5;
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let mut win = [[0.0; 2 * R + 1]; 2 * R + 1];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - R as f64, j as f64 - R as f64);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let mut per_channel = 0.0;
    for c in 0..a.channels() {
        let mut acc = 0.0;
        let mut count = 0usize;
        for cy in R..a.height() - R {
            for cx in R..a.width() - R {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, row) in win.iter().enumerate() {
                    for (j, &wv) in row.iter().enumerate() {
                        let wv = wv / total;
                        let x = a.get(cx + j - R, cy + i - R, c);
                        let y = b.get(cx + j - R, cy + i - R, c);
                        mx += wv * x;
                        my += wv * y;
                        sxx += wv * x * x;
                        syy += wv * y * y;
                        sxy += wv * x * y;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cxy = sxy - mx * my;
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        per_channel += acc / count as f64;
    }
    per_channel / a.channels() as f64
}

/// IoU of two equal-radius discs by counting points of a `res`-per-unit grid.
pub fn disc_iou_raster(ax: f64, ay: f64, bx: f64, by: f64, r: f64, res: usize) -> f64 {
    let lo_x = ax.min(bx) - r;
    let hi_x = ax.max(bx) + r;
    let lo_y = ay.min(by) - r;
    let hi_y = ay.max(by) + r;
    let step = 1.0 / res as f64;
    let nx = ((hi_x - lo_x) / step).ceil() as usize;
    let ny = ((hi_y - lo_y) / step).ceil() as usize;
    let (mut inter, mut union) = (0usize, 0usize);
    for iy in 0..ny {
        let y = lo_y + (iy as f64 + 0.5) * step;
        for ix in 0..nx {
            let x = lo_x + (ix as f64 + 0.5) * step;
            let ia = (x - ax).powi(2) + (y - ay).powi(2) <= r * r;
            let ib = (x - bx).powi(2) + (y - by).powi(2) <= r * r;
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mask-weighted centroid, `None` for an (almost) empty mask.
pub fn centroid(m: &Image) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut s) = (0.0, 0.0, 0.0);
    for y in 0..m.height() {
        for x in 0..m.width() {
            let v = m.get(x, y, 0);
            sx += v * x as f64;
            sy += v * y as f64;
            s += v;
        }
    }
    (s >= 1e-6).then(|| (sx / s, sy / s))
}

/// Central finite differences of `f` with respect to every entry of `x`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Fraction of a `res × res` grid of points inside pixel `(px, py)`, the
/// square `[px − ½, px + ½] × [py − ½, py + ½]`, for which `inside` holds.
pub fn point_sampled_coverage(px: usize, py: usize, res: usize, inside: impl Fn(f64, f64) -> bool) -> f64 {
    let mut hits = 0usize;
    for j in 0..res {
        for i in 0..res {
            let x = px as f64 - 0.5 + (i as f64 + 0.5) / res as f64;
            let y = py as f64 - 0.5 + (j as f64 + 0.5) / res as f64;
            hits += inside(x, y) as usize;
        }
    }
    hits as f64 / (res * res) as f64
}

/// Random stack, input and background for gradient checks. Appearance and
/// images are uniform on `[0, 1]`; masks are uniform on `[0.01, 0.99]` so
/// no value sits where a 1e-4 central difference of the entropy term is
/// dominated by its curvature.
pub fn random_problem(seed: u64, w: usize, h: usize, n: usize) -> (RenderingStack, Image, Image) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut img = |c: usize, lo: f64, hi: f64| {
        Image::new(w, h, c, (0..w * h * c).map(|_| rng.random_range(lo..=hi)).collect()).expect("finite")
    };
    let renderings = (0..n)
        .map(|_| Rendering::new(img(3, 0.0, 1.0), img(1, 0.01, 0.99)).expect("shapes"))
        .collect();
    let stack = RenderingStack::new(renderings).expect("nonempty");
    (stack, img(3, 0.0, 1.0), img(3, 0.0, 1.0))
}

/// Outcome of comparing an analytic stack gradient with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    /// Description of the entry with the largest relative error.
    pub worst: String,
}

/// Compares `grad_fn` against central differences of
/// [`energy_total`](crate::energy::energy_total) at every appearance and mask
/// value. Entries within `exclusion` of an L1 kink (zero residual) or of the
/// entropy clamp bounds are skipped.
pub fn check_gradient<G>(
    stack: &RenderingStack,
    input: &Image,
    bg: &Image,
    weights: &crate::energy::EnergyWeights,
    h: f64,
    exclusion: f64,
    grad_fn: G,
) -> GradientCheck
where
    G: Fn(
        &RenderingStack,
        &Image,
        &Image,
        &crate::energy::EnergyWeights,
    ) -> crate::Result<(crate::energy::EnergyBreakdown, crate::energy::StackGradient)>,
{
    use crate::energy::{energy_total, ENTROPY_CLAMP};

    let (_, grad) = grad_fn(stack, input, bg, weights).expect("analytic gradient");
    let composite = crate::formation::composite_unclamped(stack, bg).expect("composite");
    let near_kink = |p: usize, c: usize| (composite.data()[3 * p + c] - input.data()[3 * p + c]).abs() < exclusion;
    let near_clamp = |m: f64| (m - ENTROPY_CLAMP).abs() < exclusion + ENTROPY_CLAMP || (m - (1.0 - ENTROPY_CLAMP)).abs() < exclusion + ENTROPY_CLAMP;

    let energy = |s: &RenderingStack| energy_total(s, input, bg, weights, None).expect("energy").total;
    let mut report = GradientCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: String::new(),
    };
    let mut record = |analytic: f64, numeric: f64, what: String| {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = format!("{what}: analytic {analytic:e}, numeric {numeric:e}");
        }
    };

    let mut probe = stack.clone();
    for i in 0..stack.len() {
        let pixels = stack.get(i).m.pixel_count();
        for p in 0..pixels {
            for c in 0..3 {
                if near_kink(p, c) {
                    continue;
                }
                let k = 3 * p + c;
                let orig = probe.get(i).f.data()[k];
                probe.renderings_mut()[i].f.data_mut()[k] = orig + h;
                let up = energy(&probe);
                probe.renderings_mut()[i].f.data_mut()[k] = orig - h;
                let down = energy(&probe);
                probe.renderings_mut()[i].f.data_mut()[k] = orig;
                record(grad.df[i].data()[k], (up - down) / (2.0 * h), format!("dF[{i}][{p}][{c}]"));
            }
            let m = probe.get(i).m.data()[p];
            if near_clamp(m) || (0..3).any(|c| near_kink(p, c)) {
                continue;
            }
            probe.renderings_mut()[i].m.data_mut()[p] = m + h;
            let up = energy(&probe);
            probe.renderings_mut()[i].m.data_mut()[p] = m - h;
            let down = energy(&probe);
            probe.renderings_mut()[i].m.data_mut()[p] = m;
            record(grad.dm[i].data()[p], (up - down) / (2.0 * h), format!("dM[{i}][{p}]"));
        }
    }
    let total = stack.len() * stack.get(0).m.pixel_count() * 4;
    report.skipped = total - report.checked;
    report
}
