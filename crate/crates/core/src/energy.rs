//! Loss terms over a rendering stack and their analytic gradients.
//!
//! The self-supervised energy is `α_I·L_I + α_T·L_T + α_S·L_S`; the
//! supervised appearance term `L_F` is only available when ground truth is
//! supplied and is never differentiated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formation::composite_unclamped;
use crate::image::{Image, Rendering, RenderingStack};
use crate::ncc::{self, Joint, Shift, DEFAULT_PAD_FRACTION};
use crate::{mirrored_sum, Direction};

pub use crate::ncc::{maxncc, NccMatch};

/// Mask values are clamped to `[ε, 1−ε]` inside the binary entropy.
pub const ENTROPY_CLAMP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyWeights {
    pub image: f64,
    pub time: f64,
    pub sharp: f64,
    /// Weight of the supervised appearance term; used only when ground truth
    /// is passed to [`energy_total`].
    #[serde(default = "one")]
    pub appearance: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            image: 1.0,
            time: 5.0,
            sharp: 1.0,
            appearance: 1.0,
        }
    }
}

impl EnergyWeights {
    pub fn zero() -> Self {
        EnergyWeights {
            image: 0.0,
            time: 0.0,
            sharp: 0.0,
            appearance: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("image", self.image),
            ("time", self.time),
            ("sharp", self.sharp),
            ("appearance", self.appearance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("weight {name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub image: f64,
    pub time: f64,
    pub sharp: f64,
    pub appearance: Option<f64>,
}

/// Per-sub-frame gradients of the energy with respect to `F_i` and `M_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct StackGradient {
    pub df: Vec<Image>,
    pub dm: Vec<Image>,
}

impl StackGradient {
    fn zeros(stack: &RenderingStack) -> Self {
        let (w, h) = (stack.width(), stack.height());
        StackGradient {
            df: vec![Image::zeros(w, h, 3).unwrap(); stack.len()],
            dm: vec![Image::zeros(w, h, 1).unwrap(); stack.len()],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.df
            .iter()
            .chain(&self.dm)
            .flat_map(|g| g.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `(1/|O|)·Σ_p ‖A(p) − B(p)‖₁·O(p)`; without `O` the whole domain is used.
pub fn l1_masked(a: &Image, b: &Image, occupancy: Option<&Image>) -> Result<f64> {
    a.ensure_same_shape(b, "l1_masked")?;
    let ch = a.channels();
    let (ad, bd) = (a.data(), b.data());
    match occupancy {
        None => {
            let s: f64 = ad.iter().zip(bd).map(|(x, y)| (x - y).abs()).sum();
            Ok(s / a.pixel_count() as f64)
        }
        Some(o) => {
            if o.channels() != 1 {
                return Err(Error::InvalidImage("occupancy mask must have 1 channel".into()));
            }
            a.ensure_same_size(o, "l1_masked occupancy")?;
            let (mut num, mut den) = (0.0, 0.0);
            for (p, &w) in o.data().iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let d: f64 = (0..ch).map(|c| (ad[p * ch + c] - bd[p * ch + c]).abs()).sum();
                num += d * w;
                den += w;
            }
            if den <= 0.0 {
                return Err(Error::EmptyOccupancy);
            }
            Ok(num / den)
        }
    }
}

/// L1 distance between `I` and the unclamped composite of the stack over `B`.
pub fn loss_image(stack: &RenderingStack, input: &Image, bg: &Image) -> Result<f64> {
    let composite = composite_unclamped(stack, bg)?;
    l1_masked(input, &composite, None)
}

pub fn loss_time(stack: &RenderingStack) -> Result<f64> {
    Ok(time_term(stack, None)?.0)
}

/// Time-consistency value and the best shift of every consecutive pair;
/// with `fixed` shifts the search is skipped.
fn time_term(stack: &RenderingStack, fixed: Option<&[Shift]>) -> Result<(f64, Vec<Shift>)> {
    let n = stack.len();
    if n < 2 {
        return Err(Error::TimeConsistencyUndefined);
    }
    if let Some(f) = fixed {
        if f.len() != n - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} fixed shifts for {} sub-frame pairs",
                f.len(),
                n - 1
            )));
        }
    }
    let joints: Vec<Joint> = stack.renderings().iter().map(Joint::new).collect();
    let window = ncc::search_window(stack.width(), stack.height(), DEFAULT_PAD_FRACTION);
    let (values, shifts): (Vec<f64>, Vec<Shift>) = (0..n - 1)
        .map(|i| match fixed {
            Some(f) => (ncc::correlate(&joints[i], &joints[i + 1], f[i]).value, f[i]),
            None => {
                let m = ncc::best_match(&joints[i], &joints[i + 1], &window);
                (m.value, m.shift)
            }
        })
        .unzip();
    Ok((1.0 - mirrored_sum(&values) / (n - 1) as f64, shifts))
}

fn binary_entropy(m: f64) -> f64 {
    if m == 0.0 || m == 1.0 {
        return 0.0;
    }
    let m = m.clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP);
    -m * m.ln() - (1.0 - m) * (1.0 - m).ln()
}

fn binary_entropy_slope(m: f64) -> f64 {
    if m <= ENTROPY_CLAMP || m >= 1.0 - ENTROPY_CLAMP {
        0.0
    } else {
        ((1.0 - m) / m).ln()
    }
}

/// Mean per-pixel binary entropy (natural log) of the masks.
pub fn loss_sharp(stack: &RenderingStack) -> f64 {
    let per_frame: Vec<f64> = stack
        .renderings()
        .iter()
        .map(|r| {
            let s: f64 = r.m.data().iter().map(|&m| binary_entropy(m)).sum();
            s / r.m.pixel_count() as f64
        })
        .collect();
    mirrored_sum(&per_frame) / stack.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceLoss {
    pub value: f64,
    pub direction: Direction,
    /// Ground-truth sub-frames where the object region or its complement is
    /// empty; the affected terms contribute 0.
    pub degenerate_subframes: Vec<usize>,
}

/// Supervised appearance loss, minimized over both time directions.
pub fn loss_appearance(
    est: &RenderingStack,
    gt: &RenderingStack,
    gt_threshold: f64,
) -> Result<AppearanceLoss> {
    if est.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!(
            "appearance loss: {} estimated vs {} ground-truth sub-frames",
            est.len(),
            gt.len()
        )));
    }
    est.ensure_fits(&gt.get(0).m, "appearance loss")?;
    let n = est.len();
    let mut degenerate = Vec::new();
    let mut forward = Vec::with_capacity(n);
    let mut backward = Vec::with_capacity(n);
    for i in 0..n {
        let (fwd, empty) = rendering_loss(est.get(i), gt.get(i), gt_threshold);
        forward.push(fwd);
        if empty {
            degenerate.push(i);
        }
        backward.push(rendering_loss(est.get(i), gt.get(n - 1 - i), gt_threshold).0);
    }
    let forward = mirrored_sum(&forward) / n as f64;
    let backward = mirrored_sum(&backward) / n as f64;
    let (value, direction) = if backward < forward {
        (backward, Direction::Backward)
    } else {
        (forward, Direction::Forward)
    };
    Ok(AppearanceLoss {
        value,
        direction,
        degenerate_subframes: degenerate,
    })
}

/// Mask L1 on the object region and on its complement plus premultiplied
/// appearance L1 on the object region. The flag reports an empty region.
fn rendering_loss(est: &Rendering, gt: &Rendering, thr: f64) -> (f64, bool) {
    let (mut on_m, mut off_m, mut on_f) = (0.0, 0.0, 0.0);
    let (mut n_on, mut n_off) = (0usize, 0usize);
    let (ef, em, gf, gm) = (est.f.data(), est.m.data(), gt.f.data(), gt.m.data());
    for p in 0..gm.len() {
        let dm = (em[p] - gm[p]).abs();
        if gm[p] > thr {
            n_on += 1;
            on_m += dm;
            on_f += (0..3)
                .map(|c| (ef[3 * p + c] * em[p] - gf[3 * p + c] * gm[p]).abs())
                .sum::<f64>();
        } else {
            n_off += 1;
            off_m += dm;
        }
    }
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    (
        mean(on_m, n_on) + mean(off_m, n_off) + mean(on_f, n_on),
        n_on == 0 || n_off == 0,
    )
}

pub fn energy_total(
    stack: &RenderingStack,
    input: &Image,
    bg: &Image,
    weights: &EnergyWeights,
    oracle_gt: Option<&RenderingStack>,
) -> Result<EnergyBreakdown> {
    let mut e = evaluate(stack, input, bg, weights, None, false)?.0;
    if let Some(gt) = oracle_gt {
        let lf = loss_appearance(stack, gt, 0.0)?.value;
        e.appearance = Some(lf);
        e.total += weights.appearance * lf;
    }
    Ok(e)
}

/// Self-supervised energy and its gradient. The time term is differentiated
/// at the best shift of each pair (a subgradient at the argmax).
pub fn energy_gradient(
    stack: &RenderingStack,
    input: &Image,
    bg: &Image,
    weights: &EnergyWeights,
) -> Result<(EnergyBreakdown, StackGradient)> {
    let (e, _, g) = evaluate(stack, input, bg, weights, None, true)?;
    Ok((e, g.expect("gradient requested")))
}

/// Like [`energy_gradient`], optionally holding the pair shifts of the time
/// term fixed instead of searching; returns the shifts used.
pub fn energy_gradient_with_shifts(
    stack: &RenderingStack,
    input: &Image,
    bg: &Image,
    weights: &EnergyWeights,
    shifts: Option<&[Shift]>,
) -> Result<(EnergyBreakdown, StackGradient, Vec<Shift>)> {
    let (e, s, g) = evaluate(stack, input, bg, weights, shifts, true)?;
    Ok((e, g.expect("gradient requested"), s))
}

fn evaluate(
    stack: &RenderingStack,
    input: &Image,
    bg: &Image,
    weights: &EnergyWeights,
    shifts: Option<&[Shift]>,
    want_grad: bool,
) -> Result<(EnergyBreakdown, Vec<Shift>, Option<StackGradient>)> {
    weights.validate()?;
    let composite = composite_unclamped(stack, bg)?;
    input.ensure_same_shape(&composite, "input vs composite")?;
    let n = stack.len();
    let pixels = bg.pixel_count() as f64;

    let image = l1_masked(input, &composite, None)?;
    let sharp = loss_sharp(stack);
    let (time, used_shifts) = if n >= 2 {
        time_term(stack, shifts)?
    } else if weights.time > 0.0 {
        return Err(Error::TimeConsistencyUndefined);
    } else {
        (0.0, Vec::new())
    };
    let total = weights.image * image + weights.time * time + weights.sharp * sharp;
    let breakdown = EnergyBreakdown {
        total,
        image,
        time,
        sharp,
        appearance: None,
    };
    if !want_grad {
        return Ok((breakdown, used_shifts, None));
    }

    let mut grad = StackGradient::zeros(stack);
    let nf = n as f64;

    if weights.image != 0.0 {
        let scale = weights.image / (pixels * nf);
        let (c, i_data, b) = (composite.data(), input.data(), bg.data());
        let sign: Vec<f64> = c
            .iter()
            .zip(i_data)
            .map(|(c, i)| {
                let r = c - i;
                if r > 0.0 {
                    scale
                } else if r < 0.0 {
                    -scale
                } else {
                    0.0
                }
            })
            .collect();
        for (i, r) in stack.renderings().iter().enumerate() {
            let (f, m) = (r.f.data(), r.m.data());
            let df = grad.df[i].data_mut();
            for p in 0..m.len() {
                for ch in 0..3 {
                    df[3 * p + ch] += sign[3 * p + ch] * m[p];
                }
            }
            let dm = grad.dm[i].data_mut();
            for p in 0..m.len() {
                dm[p] += (0..3)
                    .map(|ch| sign[3 * p + ch] * (f[3 * p + ch] - b[3 * p + ch]))
                    .sum::<f64>();
            }
        }
    }

    if weights.sharp != 0.0 {
        let scale = weights.sharp / (pixels * nf);
        for (i, r) in stack.renderings().iter().enumerate() {
            for (g, &m) in grad.dm[i].data_mut().iter_mut().zip(r.m.data()) {
                *g += scale * binary_entropy_slope(m);
            }
        }
    }

    if weights.time != 0.0 && n >= 2 {
        let scale = -weights.time / (n - 1) as f64;
        let joints: Vec<Joint> = stack.renderings().iter().map(Joint::new).collect();
        let StackGradient { df, dm } = &mut grad;
        for (i, &s) in used_shifts.iter().enumerate() {
            let corr = ncc::correlate(&joints[i], &joints[i + 1], s);
            let (df_a, df_b) = df.split_at_mut(i + 1);
            let (dm_a, dm_b) = dm.split_at_mut(i + 1);
            ncc::accumulate_gradient(
                &joints[i],
                &joints[i + 1],
                s,
                &corr,
                scale,
                (df_a[i].data_mut(), dm_a[i].data_mut()),
                (df_b[0].data_mut(), dm_b[0].data_mut()),
            );
        }
    }

    Ok((breakdown, used_shifts, Some(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formation::{compose_subframes, BlurKernel};
    use crate::oracle;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
        Image::new(w, h, c, (0..w * h * c).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn rand_stack(rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> RenderingStack {
        RenderingStack::new(
            (0..n)
                .map(|_| Rendering::new(rand_img(rng, w, h, 3), rand_img(rng, w, h, 1)).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn disc_rendering(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> Rendering {
        let m = Image::from_fn(w, h, 1, |x, y, px| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            px[0] = (r + 0.5 - d).clamp(0.0, 1.0);
        })
        .unwrap();
        let f = Image::from_fn(w, h, 3, |x, y, px| {
            let on = m.get(x, y, 0) > 0.0;
            px.copy_from_slice(&if on { [0.9, 0.6, 0.3] } else { [0.0; 3] });
        })
        .unwrap();
        Rendering::new(f, m).unwrap()
    }

    #[test]
    fn l1_closed_forms_and_errors() {
        let a = Image::zeros(4, 3, 3).unwrap();
        let b = Image::filled(4, 3, 3, 1.0).unwrap();
        assert_eq!(l1_masked(&a, &a, None).unwrap(), 0.0);
        assert_eq!(l1_masked(&a, &b, None).unwrap(), 3.0);
        let empty = Image::zeros(4, 3, 1).unwrap();
        let err = l1_masked(&a, &b, Some(&empty)).unwrap_err();
        assert!(err.to_string().contains("empty occupancy"));
    }

    #[test]
    fn l1_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_img(&mut rng, 9, 7, 3);
        let b = rand_img(&mut rng, 9, 7, 3);
        let o = rand_img(&mut rng, 9, 7, 1).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        assert!((l1_masked(&a, &b, Some(&o)).unwrap() - oracle::l1_masked(&a, &b, Some(&o))).abs() < 1e-12);
        assert!((l1_masked(&a, &b, None).unwrap() - oracle::l1_masked(&a, &b, None)).abs() < 1e-12);
    }

    #[test]
    fn image_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stack = rand_stack(&mut rng, 8, 6, 3);
        let bg = rand_img(&mut rng, 8, 6, 3);
        let composite = composite_unclamped(&stack, &bg).unwrap();
        assert!(loss_image(&stack, &composite, &bg).unwrap() <= 1e-12);

        let input = rand_img(&mut rng, 8, 6, 3);
        let expect = oracle::l1_masked(&input, &oracle::compose_subframes(&stack, &bg), None);
        // random F, M in [0,1] never leave [0,1] so clamping does not matter
        assert!((loss_image(&stack, &input, &bg).unwrap() - expect).abs() < 1e-12);

        let mut empty = stack.clone();
        for r in empty.renderings_mut() {
            r.m = Image::zeros(8, 6, 1).unwrap();
        }
        let lb = l1_masked(&input, &bg, None).unwrap();
        assert!((loss_image(&empty, &input, &bg).unwrap() - lb).abs() < 1e-12);
    }

    #[test]
    fn time_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = Rendering::new(rand_img(&mut rng, 10, 10, 3), rand_img(&mut rng, 10, 10, 1)).unwrap();
        let constant = RenderingStack::new(vec![r.clone(); 4]).unwrap();
        assert!(loss_time(&constant).unwrap().abs() < 1e-12);
        assert!(matches!(
            loss_time(&RenderingStack::new(vec![r]).unwrap()),
            Err(Error::TimeConsistencyUndefined)
        ));

        let base = disc_rendering(40, 40, 12.0, 20.0, 5.0);
        let moving = RenderingStack::new(
            (0..5)
                .map(|i| {
                    let k = BlurKernel::new([(3 * i, 1, 1.0)]).unwrap();
                    Rendering::new(k.convolve(&base.f), k.convolve(&base.m)).unwrap()
                })
                .collect(),
        )
        .unwrap();
        assert!(loss_time(&moving).unwrap().abs() < 1e-9);

        let stack = rand_stack(&mut rng, 11, 9, 4);
        let pairs: f64 = (0..3)
            .map(|i| oracle::maxncc(stack.get(i), stack.get(i + 1), 2, 1).0)
            .sum();
        assert!((loss_time(&stack).unwrap() - (1.0 - pairs / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn sharp_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let binary = rand_img(&mut rng, 6, 6, 1).map(|v| v.round());
        let r = Rendering::new(Image::zeros(6, 6, 3).unwrap(), binary).unwrap();
        assert_eq!(loss_sharp(&RenderingStack::new(vec![r; 2]).unwrap()), 0.0);

        let half = Rendering::new(Image::zeros(6, 6, 3).unwrap(), Image::filled(6, 6, 1, 0.5).unwrap()).unwrap();
        let v = loss_sharp(&RenderingStack::new(vec![half; 3]).unwrap());
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);

        let stack = rand_stack(&mut rng, 7, 5, 3);
        let mut expect = 0.0;
        for r in stack.renderings() {
            let mut s = 0.0;
            for &m in r.m.data() {
                let m = m.clamp(1e-4, 1.0 - 1e-4);
                s += -m * m.ln() - (1.0 - m) * (1.0 - m).ln();
            }
            expect += s / 35.0;
        }
        assert!((loss_sharp(&stack) - expect / 3.0).abs() < 1e-9);
    }

    #[test]
    fn appearance_identity_and_reversal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = rand_stack(&mut rng, 6, 5, 4);
        let same = loss_appearance(&gt, &gt, 0.0).unwrap();
        assert_eq!((same.value, same.direction), (0.0, Direction::Forward));
        let rev = loss_appearance(&gt.reversed(), &gt, 0.0).unwrap();
        assert_eq!((rev.value, rev.direction), (0.0, Direction::Backward));
    }

    /// Direct evaluation of both pairings with explicit region masks.
    fn appearance_oracle(est: &RenderingStack, gt: &RenderingStack) -> f64 {
        let n = est.len();
        let pair = |e: &Rendering, g: &Rendering| {
            let on = g.m.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let off = g.m.map(|v| if v > 0.0 { 0.0 } else { 1.0 });
            oracle::l1_masked(&e.m, &g.m, Some(&on))
                + oracle::l1_masked(&e.m, &g.m, Some(&off))
                + oracle::l1_masked(&e.premultiplied(), &g.premultiplied(), Some(&on))
        };
        let fwd: f64 = (0..n).map(|i| pair(est.get(i), gt.get(i))).sum::<f64>() / n as f64;
        let bwd: f64 = (0..n).map(|i| pair(est.get(i), gt.get(n - 1 - i))).sum::<f64>() / n as f64;
        fwd.min(bwd)
    }

    #[test]
    fn appearance_matches_two_direction_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let est = rand_stack(&mut rng, 7, 6, 3);
        let mut gt = rand_stack(&mut rng, 7, 6, 3);
        for r in gt.renderings_mut() {
            r.m = r.m.map(|v| if v < 0.4 { 0.0 } else { v });
        }
        let v = loss_appearance(&est, &gt, 0.0).unwrap();
        assert!((v.value - appearance_oracle(&est, &gt)).abs() < 1e-12);
        assert!(v.degenerate_subframes.is_empty());
    }

    #[test]
    fn appearance_flags_empty_regions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let est = rand_stack(&mut rng, 5, 5, 2);
        let mut gt = est.clone();
        gt.renderings_mut()[1].m = Image::zeros(5, 5, 1).unwrap();
        let v = loss_appearance(&est, &gt, 0.5).unwrap();
        assert_eq!(v.degenerate_subframes, vec![1]);
        assert!(v.value.is_finite());
    }

    proptest! {
        #[test]
        fn losses_are_reversal_exact(seed in 0u64..200, n in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let stack = rand_stack(&mut rng, 8, 7, n);
            let gt = rand_stack(&mut rng, 8, 7, n);
            let input = rand_img(&mut rng, 8, 7, 3);
            let bg = rand_img(&mut rng, 8, 7, 3);
            let rev = stack.reversed();
            prop_assert_eq!(loss_image(&stack, &input, &bg).unwrap(), loss_image(&rev, &input, &bg).unwrap());
            prop_assert_eq!(loss_time(&stack).unwrap(), loss_time(&rev).unwrap());
            prop_assert_eq!(loss_sharp(&stack), loss_sharp(&rev));
            prop_assert_eq!(
                loss_appearance(&stack, &gt, 0.0).unwrap().value,
                loss_appearance(&rev, &gt, 0.0).unwrap().value
            );
        }

        #[test]
        fn sharp_loss_bounded_by_ln2(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let stack = rand_stack(&mut rng, 5, 4, 3);
            prop_assert!(loss_sharp(&stack) <= std::f64::consts::LN_2);
        }
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let stack = rand_stack(&mut rng, 10, 9, 3);
        let gt = rand_stack(&mut rng, 10, 9, 3);
        let input = rand_img(&mut rng, 10, 9, 3);
        let bg = rand_img(&mut rng, 10, 9, 3);
        let zero = energy_total(&stack, &input, &bg, &EnergyWeights::zero(), Some(&gt)).unwrap();
        assert_eq!(zero.total, 0.0);

        let w = EnergyWeights {
            image: 0.7,
            time: 2.0,
            sharp: 0.3,
            appearance: 1.5,
        };
        let e = energy_total(&stack, &input, &bg, &w, Some(&gt)).unwrap();
        let expect = 0.7 * loss_image(&stack, &input, &bg).unwrap()
            + 2.0 * loss_time(&stack).unwrap()
            + 0.3 * loss_sharp(&stack)
            + 1.5 * loss_appearance(&stack, &gt, 0.0).unwrap().value;
        assert!((e.total - expect).abs() < 1e-12);
    }

    #[test]
    fn gt_stack_energy_has_no_image_term() {
        let frames: Vec<Rendering> = (0..4).map(|i| disc_rendering(30, 30, 8.0 + 3.0 * i as f64, 15.0, 4.0)).collect();
        let stack = RenderingStack::new(frames).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bg = rand_img(&mut rng, 30, 30, 3);
        let input = compose_subframes(&stack, &bg).unwrap();
        let w = EnergyWeights::default();
        let e = energy_total(&stack, &input, &bg, &w, None).unwrap();
        assert!(e.image <= 1e-12);
        assert!((e.total - (w.time * e.time + w.sharp * e.sharp)).abs() <= 1e-12);
    }

    #[test]
    fn gradient_breakdown_matches_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let stack = rand_stack(&mut rng, 12, 10, 4);
        let input = rand_img(&mut rng, 12, 10, 3);
        let bg = rand_img(&mut rng, 12, 10, 3);
        let w = EnergyWeights::default();
        let (e, _) = energy_gradient(&stack, &input, &bg, &w).unwrap();
        let t = energy_total(&stack, &input, &bg, &w, None).unwrap();
        assert!((e.total - t.total).abs() <= 1e-12);

        let (_, g) = energy_gradient(&stack, &input, &bg, &EnergyWeights::zero()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn image_term_gradient_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let stack = rand_stack(&mut rng, 6, 5, 3);
        let input = rand_img(&mut rng, 6, 5, 3);
        let bg = rand_img(&mut rng, 6, 5, 3);
        let w = EnergyWeights {
            image: 1.0,
            ..EnergyWeights::zero()
        };
        let (_, g) = energy_gradient(&stack, &input, &bg, &w).unwrap();
        let c = composite_unclamped(&stack, &bg).unwrap();
        let d = 30.0;
        for i in 0..3 {
            for p in 0..30 {
                for ch in 0..3 {
                    let r: f64 = c.data()[3 * p + ch] - input.data()[3 * p + ch];
                    let expect = r.signum() * stack.get(i).m.data()[p] / 3.0 / d;
                    assert!((g.df[i].data()[3 * p + ch] - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let (stack, input, bg) = oracle::random_problem(seed, 16, 16, 4);
            let report = oracle::check_gradient(&stack, &input, &bg, &EnergyWeights::default(), 1e-4, 1e-3, energy_gradient);
            assert!(report.max_rel_error <= 1e-3, "{report:?}");
            assert!(report.checked > 3000, "{report:?}");
        }
    }

    #[test]
    fn gradient_near_mask_bounds_with_fine_step() {
        // masks over all of [0, 1]; the entropy curvature near the bounds
        // needs a smaller stencil than 1e-4
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let stack = rand_stack(&mut rng, 12, 12, 3);
        let input = rand_img(&mut rng, 12, 12, 3);
        let bg = rand_img(&mut rng, 12, 12, 3);
        let report = oracle::check_gradient(&stack, &input, &bg, &EnergyWeights::default(), 1e-6, 1e-3, energy_gradient);
        assert!(report.max_rel_error <= 1e-3, "{report:?}");
    }
}
