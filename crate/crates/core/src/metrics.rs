//! Evaluation protocol: PSNR, SSIM, trajectory extraction, TIoU and the
//! best-of-both-directions scoring of temporal super-resolution.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formation::compose_superres;
use crate::image::{Image, RenderingStack};
use crate::synth::SynthSample;
use crate::{mirrored_sum, Direction};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
/// Masks with less total mass than this have no defined center.
pub const ABSENT_MASS: f64 = 1e-6;

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b, "psnr")?;
    let se: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    let mse = se / a.data().len() as f64;
    Ok(if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    })
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable valid-region filtering of one channel with the SSIM window.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * horiz[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5) over valid window
/// centers, averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let taps = gaussian_taps();
    let mut total = 0.0;
    for c in 0..ch {
        let x: Vec<f64> = a.data().iter().skip(c).step_by(ch).copied().collect();
        let y: Vec<f64> = b.data().iter().skip(c).step_by(ch).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
        let mx = filter_valid(&x, w, h, &taps);
        let my = filter_valid(&y, w, h, &taps);
        let sxx = filter_valid(&xx, w, h, &taps);
        let syy = filter_valid(&yy, w, h, &taps);
        let sxy = filter_valid(&xy, w, h, &taps);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / ch as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    /// `None` when the sub-frame has no object.
    pub pos: Option<[f64; 2]>,
}

/// Object-center path over `t ∈ [0, 1]`, with an optional disc radius used
/// for TIoU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub radius: Option<f64>,
}

impl Trajectory {
    pub fn new(points: Vec<TrajectoryPoint>, radius: Option<f64>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::InvalidArgument("trajectory times must increase strictly".into()));
        }
        if points.iter().any(|p| !(0.0..=1.0).contains(&p.t)) {
            return Err(Error::InvalidArgument("trajectory times must lie in [0, 1]".into()));
        }
        Ok(Trajectory { points, radius })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Position at time `t` by linear interpolation between neighbouring
    /// points, constant beyond the ends; `None` if a needed point is absent.
    pub fn position_at(&self, t: f64) -> Option<[f64; 2]> {
        let pts = &self.points;
        let first = pts.first()?;
        let last = pts.last()?;
        if t <= first.t {
            return first.pos;
        }
        if t >= last.t {
            return last.pos;
        }
        let j = pts.partition_point(|p| p.t <= t) - 1;
        let (a, b) = (&pts[j], &pts[j + 1]);
        if a.t == t {
            return a.pos;
        }
        let (pa, pb) = (a.pos?, b.pos?);
        let u = (t - a.t) / (b.t - a.t);
        Some([pa[0] + u * (pb[0] - pa[0]), pa[1] + u * (pb[1] - pa[1])])
    }
}

/// Centers of mass of the masks at the stack times; radius is the mean
/// equivalent-disc radius of the present sub-frames.
pub fn extract_trajectory(stack: &RenderingStack) -> Result<Trajectory> {
    let w = stack.width();
    let mut radii = Vec::new();
    let points = stack
        .renderings()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (mut sx, mut sy, mut s) = (0.0, 0.0, 0.0);
            for (p, &m) in r.m.data().iter().enumerate() {
                sx += m * (p % w) as f64;
                sy += m * (p / w) as f64;
                s += m;
            }
            let pos = (s >= ABSENT_MASS).then(|| {
                radii.push((s / PI).sqrt());
                [sx / s, sy / s]
            });
            TrajectoryPoint {
                t: stack.time(i),
                pos,
            }
        })
        .collect();
    if radii.is_empty() {
        return Err(Error::NoObject);
    }
    let radius = radii.iter().sum::<f64>() / radii.len() as f64;
    Trajectory::new(points, Some(radius))
}

/// IoU of two discs of radius `r` whose centers are `d` apart.
pub fn disc_iou(d: f64, r: f64) -> f64 {
    if r <= 0.0 || d >= 2.0 * r {
        return 0.0;
    }
    let lens = 2.0 * r * r * (d / (2.0 * r)).acos() - 0.5 * d * (4.0 * r * r - d * d).sqrt();
    lens / (2.0 * PI * r * r - lens)
}

/// Disc IoU averaged over the ground-truth times, with the estimate
/// resampled onto them. Absent estimates contribute 0; absent ground-truth
/// points are skipped.
pub fn tiou(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Empty("ground-truth trajectory"));
    }
    let r = gt
        .radius
        .ok_or_else(|| Error::InvalidArgument("ground-truth trajectory has no radius".into()))?;
    let mut scores = Vec::with_capacity(gt.len());
    for p in &gt.points {
        let Some(g) = p.pos else { continue };
        let iou = match est.position_at(p.t) {
            Some(e) => disc_iou(((e[0] - g[0]).powi(2) + (e[1] - g[1]).powi(2)).sqrt(), r),
            None => 0.0,
        };
        scores.push(iou);
    }
    if scores.is_empty() {
        return Err(Error::NoObject);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr_db: f64,
    pub ssim: f64,
    /// Absent for baselines, which have no trajectory.
    pub tiou: Option<f64>,
    pub direction: Direction,
    /// `(psnr, ssim)` of every ground-truth super-resolved frame against the
    /// prediction paired with it.
    pub per_subframe: Vec<(f64, f64)>,
}

fn score_pairs(predictions: &[Image], gt_frames: &[Image], direction: Direction) -> Result<Vec<(f64, f64)>> {
    let l = gt_frames.len();
    (0..l)
        .map(|k| {
            let pred = match direction {
                Direction::Forward => &predictions[k],
                Direction::Backward => &predictions[l - 1 - k],
            };
            Ok((psnr(pred, &gt_frames[k])?, ssim(pred, &gt_frames[k])?))
        })
        .collect()
}

fn mean_scores(scores: &[(f64, f64)]) -> (f64, f64) {
    let n = scores.len() as f64;
    let p: Vec<f64> = scores.iter().map(|s| s.0).collect();
    let s: Vec<f64> = scores.iter().map(|s| s.1).collect();
    (mirrored_sum(&p) / n, mirrored_sum(&s) / n)
}

/// Scores an estimated stack against a sample's ground truth by `l`-fold
/// temporal super-resolution, in whichever time direction gives the higher
/// PSNR (ties go forward).
pub fn evaluate(est: &RenderingStack, sample: &SynthSample, l: usize, epsilon: f64) -> Result<EvalReport> {
    est.ensure_fits(&sample.background, "estimate vs sample")?;
    let gt_frames = compose_superres(&sample.gt_stack, &sample.background, l, epsilon)?;
    let predictions = compose_superres(est, &sample.background, l, epsilon)?;
    let fwd = score_pairs(&predictions, &gt_frames, Direction::Forward)?;
    let bwd = score_pairs(&predictions, &gt_frames, Direction::Backward)?;
    let (pf, sf) = mean_scores(&fwd);
    let (pb, sb) = mean_scores(&bwd);
    let (direction, psnr_db, ssim, per_subframe, tiou_stack) = if pb > pf {
        (Direction::Backward, pb, sb, bwd, est.reversed())
    } else {
        (Direction::Forward, pf, sf, fwd, est.clone())
    };
    let tiou = match extract_trajectory(&tiou_stack) {
        Ok(traj) => tiou(&traj, &sample.gt_traj)?,
        Err(Error::NoObject) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        psnr_db,
        ssim,
        tiou: Some(tiou),
        direction,
        per_subframe,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    /// The blurred input repeated for every frame.
    Input,
    /// The background repeated for every frame.
    Background,
}

/// Scores a constant prediction (input or background) for every
/// super-resolved frame; no trajectory, so TIoU is absent.
pub fn baseline_report(sample: &SynthSample, kind: BaselineKind, l: usize, epsilon: f64) -> Result<EvalReport> {
    let gt_frames = compose_superres(&sample.gt_stack, &sample.background, l, epsilon)?;
    let pred = match kind {
        BaselineKind::Input => &sample.input,
        BaselineKind::Background => &sample.background,
    };
    let predictions = vec![pred.clone(); l];
    let per_subframe = score_pairs(&predictions, &gt_frames, Direction::Forward)?;
    let (psnr_db, ssim) = mean_scores(&per_subframe);
    Ok(EvalReport {
        psnr_db,
        ssim,
        tiou: None,
        direction: Direction::Forward,
        per_subframe,
    })
}
