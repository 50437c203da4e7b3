use std::collections::HashSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fmo_core::synth::{sample_scene, write_dataset, SynthSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::BenchConfig;
use crate::with_pool;

/// `count` distinct per-sample seeds derived from the run seed.
pub fn sample_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(count);
    let mut seeds = Vec::with_capacity(count);
    while seeds.len() < count {
        let s = rng.random::<u64>();
        if seen.insert(s) {
            seeds.push(s);
        }
    }
    seeds
}

pub fn sample_id(index: usize) -> String {
    format!("{index:04}")
}

/// Generates `cfg.count` samples and writes them under `out`.
pub fn cmd_synth(cfg: &BenchConfig, out: &Path, jobs: usize) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    let seeds = sample_seeds(cfg.seed, cfg.count);
    let canvas = (cfg.canvas[0], cfg.canvas[1]);
    let results: Vec<_> = with_pool(jobs, || {
        seeds
            .par_iter()
            .enumerate()
            .map(|(k, &seed)| {
                sample_scene(seed, canvas, cfg.n_gt).map(|mut s| {
                    s.id = sample_id(k);
                    s
                })
            })
            .collect()
    })?;
    let mut samples = Vec::with_capacity(results.len());
    let mut failed = 0usize;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => {
                log::debug!("sample {} (seed {}) generated", s.id, s.spec.seed);
                samples.push(s);
            }
            Err(e) => {
                log::error!("sample {} (seed {}): {e}", sample_id(k), seeds[k]);
                failed += 1;
            }
        }
    }
    let generator = serde_json::to_value(cfg).context("serializing config")?;
    write_dataset(&samples, out, generator).with_context(|| format!("writing dataset to {}", out.display()))?;
    log::info!("wrote {} samples to {}", samples.len(), out.display());
    if failed > 0 {
        bail!("{failed} of {} samples could not be generated", cfg.count);
    }
    Ok(samples)
}
