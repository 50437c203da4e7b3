//! Per-sample solver runs. Output layout:
//!
//! ```text
//! <out>/<id>/est/F_00.png ...  M_00.png ... (16 bit)
//! <out>/<id>/history.csv
//! <out>/<id>/solve.json
//! ```

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use fmo_core::energy::EnergyBreakdown;
use fmo_core::image::{load_png, save_png, BitDepth, Rendering, RenderingStack};
use fmo_core::solver::{solve, SolveResult, SolverConfig};
use fmo_core::synth::{read_dataset, SynthSample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::BenchConfig;
use crate::with_pool;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveMeta {
    pub id: String,
    pub n_subframes: usize,
    pub iterations_run: usize,
    pub converged: bool,
    pub final_energy: EnergyBreakdown,
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Default)]
pub struct SolveSummary {
    pub solved: Vec<String>,
    pub failed: Vec<(String, String)>,
}

fn frame(kind: &str, i: usize) -> String {
    format!("{kind}_{i:02}.png")
}

fn write_history(result: &SolveResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["iter", "total", "image", "time", "sharp"])?;
    for (k, e) in result.history.iter().enumerate() {
        w.write_record([
            k.to_string(),
            e.total.to_string(),
            e.image.to_string(),
            e.time.to_string(),
            e.sharp.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_estimate(dir: &Path, result: &SolveResult, meta: &SolveMeta) -> Result<()> {
    let est = dir.join("est");
    fs::create_dir_all(&est).with_context(|| format!("creating {}", est.display()))?;
    for (i, r) in result.stack.renderings().iter().enumerate() {
        save_png(&r.f, est.join(frame("F", i)), BitDepth::Eight)?;
        save_png(&r.m, est.join(frame("M", i)), BitDepth::Sixteen)?;
    }
    write_history(result, &dir.join("history.csv"))?;
    let path = dir.join("solve.json");
    fs::write(&path, serde_json::to_string_pretty(meta)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Reads back the stack and metadata written by [`write_estimate`].
pub fn read_estimate(dir: &Path) -> Result<(RenderingStack, SolveMeta)> {
    let path = dir.join("solve.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let meta: SolveMeta = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let est = dir.join("est");
    let renderings = (0..meta.n_subframes)
        .map(|i| Ok(Rendering::new(load_png(est.join(frame("F", i)))?, load_png(est.join(frame("M", i)))?)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((RenderingStack::new(renderings)?, meta))
}

fn solve_one(sample: &SynthSample, cfg: &BenchConfig, out: &Path) -> Result<()> {
    let start = Instant::now();
    let result = solve(&sample.input, &sample.background, &cfg.solver)?;
    let elapsed = start.elapsed().as_secs_f64();
    let meta = SolveMeta {
        id: sample.id.clone(),
        n_subframes: result.stack.len(),
        iterations_run: result.iterations_run,
        converged: result.converged,
        final_energy: *result.history.last().expect("history holds the initial energy"),
        solver: cfg.solver.clone(),
        wall_time_s: cfg.record_time.then_some(elapsed),
    };
    write_estimate(&out.join(&sample.id), &result, &meta)?;
    log::info!(
        "{}: {} iterations, energy {:.6} -> {:.6}, {:.1}s",
        sample.id,
        result.iterations_run,
        result.history[0].total,
        meta.final_energy.total,
        elapsed
    );
    Ok(())
}

/// Solves every sample of the dataset at `dataset`, writing under `out`.
/// A failing sample is logged and skipped.
pub fn cmd_solve(cfg: &BenchConfig, dataset: &Path, out: &Path, jobs: usize) -> Result<SolveSummary> {
    cfg.validate()?;
    let (samples, _) = read_dataset(dataset).with_context(|| format!("reading dataset {}", dataset.display()))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let outcomes: Vec<Result<()>> = with_pool(jobs, || samples.par_iter().map(|s| solve_one(s, cfg, out)).collect())?;
    let mut summary = SolveSummary::default();
    for (s, r) in samples.iter().zip(outcomes) {
        match r {
            Ok(()) => summary.solved.push(s.id.clone()),
            Err(e) => {
                log::error!("{}: {e:#}", s.id);
                summary.failed.push((s.id.clone(), format!("{e:#}")));
            }
        }
    }
    Ok(summary)
}
