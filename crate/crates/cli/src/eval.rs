use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use fmo_core::metrics::{baseline_report, evaluate, BaselineKind, EvalReport};
use fmo_core::synth::{read_dataset, SynthSample};
use fmo_core::Direction;
use rayon::prelude::*;

use crate::config::BenchConfig;
use crate::solve::read_estimate;
use crate::with_pool;

pub const CSV_HEADER: [&str; 7] = ["id", "method", "psnr_db", "ssim", "tiou", "direction", "wall_time_s"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Solver,
    BaselineInput,
    BaselineBackground,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Solver => "solver",
            Method::BaselineInput => "baseline-I",
            Method::BaselineBackground => "baseline-B",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub id: String,
    pub method: Method,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub tiou: Option<f64>,
    pub direction: Option<Direction>,
    pub wall_time_s: Option<f64>,
}

impl ResultRow {
    fn empty(id: &str, method: Method) -> Self {
        ResultRow {
            id: id.to_string(),
            method,
            psnr_db: None,
            ssim: None,
            tiou: None,
            direction: None,
            wall_time_s: None,
        }
    }

    fn from_report(id: &str, method: Method, r: &EvalReport, wall_time_s: Option<f64>) -> Self {
        ResultRow {
            id: id.to_string(),
            method,
            psnr_db: Some(r.psnr_db),
            ssim: Some(r.ssim),
            tiou: r.tiou,
            direction: Some(r.direction),
            wall_time_s,
        }
    }

    fn fields(&self) -> [String; 7] {
        let num = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        [
            self.id.clone(),
            self.method.as_str().to_string(),
            num(self.psnr_db),
            num(self.ssim),
            num(self.tiou),
            self.direction.map(|d| d.to_string()).unwrap_or_default(),
            num(self.wall_time_s),
        ]
    }
}

fn mean(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = vals.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// `MEAN` row of one method over the rows that have each metric.
pub fn mean_row(rows: &[ResultRow], method: Method) -> ResultRow {
    let mine: Vec<&ResultRow> = rows.iter().filter(|r| r.method == method && r.id != "MEAN").collect();
    ResultRow {
        id: "MEAN".into(),
        method,
        psnr_db: mean(mine.iter().map(|r| r.psnr_db)),
        ssim: mean(mine.iter().map(|r| r.ssim)),
        tiou: mean(mine.iter().map(|r| r.tiou)),
        direction: None,
        wall_time_s: mean(mine.iter().map(|r| r.wall_time_s)),
    }
}

fn eval_sample(sample: &SynthSample, methods: &[Method], est_dir: Option<&Path>, cfg: &BenchConfig) -> Vec<ResultRow> {
    let (l, eps) = (cfg.eval.l, cfg.eval.epsilon);
    methods
        .iter()
        .map(|&m| {
            let outcome = match m {
                Method::Solver => {
                    let dir = est_dir.expect("solver rows need an estimate directory").join(&sample.id);
                    read_estimate(&dir).and_then(|(stack, meta)| {
                        let report = evaluate(&stack, sample, l, eps)?;
                        Ok(ResultRow::from_report(&sample.id, m, &report, meta.wall_time_s))
                    })
                }
                Method::BaselineInput | Method::BaselineBackground => {
                    let kind = if m == Method::BaselineInput {
                        BaselineKind::Input
                    } else {
                        BaselineKind::Background
                    };
                    baseline_report(sample, kind, l, eps)
                        .map(|r| ResultRow::from_report(&sample.id, m, &r, None))
                        .map_err(Into::into)
                }
            };
            outcome.unwrap_or_else(|e| {
                log::warn!("{} {}: {e:#}", sample.id, m.as_str());
                ResultRow::empty(&sample.id, m)
            })
        })
        .collect()
}

/// Rows for every sample in manifest order, each with one row per method,
/// followed by one `MEAN` row per method.
pub fn evaluate_dataset(
    cfg: &BenchConfig,
    samples: &[SynthSample],
    est_dir: Option<&Path>,
    methods: &[Method],
    jobs: usize,
) -> Result<Vec<ResultRow>> {
    let per_sample: Vec<Vec<ResultRow>> = with_pool(jobs, || {
        samples
            .par_iter()
            .map(|s| eval_sample(s, methods, est_dir, cfg))
            .collect()
    })?;
    let mut rows: Vec<ResultRow> = per_sample.into_iter().flatten().collect();
    let means: Vec<ResultRow> = methods.iter().map(|&m| mean_row(&rows, m)).collect();
    rows.extend(means);
    Ok(rows)
}

pub fn write_rows(rows: &[ResultRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluates the estimates under `est_dir` (if any) and the requested
/// baselines on the dataset at `dataset`, writing CSV to `out`.
pub fn cmd_eval(
    cfg: &BenchConfig,
    dataset: &Path,
    est_dir: Option<&Path>,
    baselines: &[BaselineKind],
    out: &Path,
    jobs: usize,
) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let (samples, _) = read_dataset(dataset).with_context(|| format!("reading dataset {}", dataset.display()))?;
    let mut methods = Vec::new();
    if est_dir.is_some() {
        methods.push(Method::Solver);
    }
    for b in baselines {
        let m = match b {
            BaselineKind::Input => Method::BaselineInput,
            BaselineKind::Background => Method::BaselineBackground,
        };
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        anyhow::bail!("nothing to evaluate: give an estimate directory or at least one baseline");
    }
    let rows = evaluate_dataset(cfg, &samples, est_dir, &methods, jobs)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_rows(&rows, std::io::BufWriter::new(file))?;
    Ok(rows)
}
