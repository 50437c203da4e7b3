//! On-disk layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<id>/I.png  B.png
//! <dir>/<id>/gt/F_00.png ...  M_00.png ... (16 bit)  traj.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SceneSpec, SynthSample};
use crate::error::{Error, Result};
use crate::image::{load_png, save_png, BitDepth, Image, Rendering, RenderingStack};
use crate::metrics::{extract_trajectory, Trajectory, TrajectoryPoint};

pub const MANIFEST_VERSION: u32 = 1;
const TRAJ_HEADER: &str = "index,t,x,y";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    /// Whatever configuration produced the dataset, kept verbatim.
    #[serde(default)]
    generator: serde_json::Value,
    samples: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: String,
    n_subframes: usize,
    width: usize,
    height: usize,
    scene: SceneSpec,
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sample id {id:?} is not a plain file name")))
    }
}

fn write_traj(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut out = String::from(TRAJ_HEADER);
    out.push('\n');
    for (i, p) in traj.points.iter().enumerate() {
        match p.pos {
            Some([x, y]) => out.push_str(&format!("{i},{},{x},{y}\n", p.t)),
            None => out.push_str(&format!("{i},{},,\n", p.t)),
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_traj(path: &Path, n: usize) -> Result<Vec<TrajectoryPoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(TRAJ_HEADER) {
        return Err(Error::dataset(path, format!("expected header {TRAJ_HEADER:?}")));
    }
    let parse = |s: &str, line: usize| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::dataset(path, format!("line {line}: bad number {s:?}")))
    };
    let mut points = Vec::with_capacity(n);
    for (k, line) in lines.filter(|l| !l.is_empty()).enumerate() {
        let row = k + 2;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 || cols[0].parse::<usize>().ok() != Some(k) {
            return Err(Error::dataset(path, format!("line {row}: expected index {k} and 4 columns")));
        }
        let pos = match (cols[2], cols[3]) {
            ("", "") => None,
            (x, y) => Some([parse(x, row)?, parse(y, row)?]),
        };
        points.push(TrajectoryPoint {
            t: parse(cols[1], row)?,
            pos,
        });
    }
    if points.len() != n {
        return Err(Error::dataset(path, format!("expected {n} rows, found {}", points.len())));
    }
    Ok(points)
}

fn frame_name(kind: &str, i: usize) -> String {
    format!("{kind}_{i:02}.png")
}

/// Writes `samples` under `dir`, with `generator` recorded in the manifest.
pub fn write_dataset(samples: &[SynthSample], dir: impl AsRef<Path>, generator: serde_json::Value) -> Result<()> {
    let dir = dir.as_ref();
    let mut seen = std::collections::HashSet::new();
    for s in samples {
        check_id(&s.id)?;
        if !seen.insert(s.id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate sample id {:?}", s.id)));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in samples {
        let gt = dir.join(&s.id).join("gt");
        fs::create_dir_all(&gt).map_err(|e| Error::io(&gt, e))?;
        save_png(&s.input, dir.join(&s.id).join("I.png"), BitDepth::Eight)?;
        save_png(&s.background, dir.join(&s.id).join("B.png"), BitDepth::Eight)?;
        for (i, r) in s.gt_stack.renderings().iter().enumerate() {
            save_png(&r.f, gt.join(frame_name("F", i)), BitDepth::Eight)?;
            save_png(&r.m, gt.join(frame_name("M", i)), BitDepth::Sixteen)?;
        }
        write_traj(&s.gt_traj, &gt.join("traj.csv"))?;
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        generator,
        samples: samples
            .iter()
            .map(|s| ManifestEntry {
                id: s.id.clone(),
                n_subframes: s.gt_stack.len(),
                width: s.width(),
                height: s.height(),
                scene: s.spec.clone(),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn load_sized(path: PathBuf, w: usize, h: usize, channels: usize) -> Result<Image> {
    let img = load_png(&path)?;
    if img.width() != w || img.height() != h || img.channels() != channels {
        return Err(Error::dataset(
            &path,
            format!(
                "expected {w}x{h} with {channels} channel(s), found {}x{} with {}",
                img.width(),
                img.height(),
                img.channels()
            ),
        ));
    }
    Ok(img)
}

/// Reads a dataset written by [`write_dataset`], in manifest order, along
/// with the recorded generator configuration.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(Vec<SynthSample>, serde_json::Value)> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::dataset(&path, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::dataset(
            &path,
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    let samples = manifest
        .samples
        .into_iter()
        .map(|e| {
            check_id(&e.id).map_err(|err| Error::dataset(&path, err.to_string()))?;
            if e.n_subframes == 0 {
                return Err(Error::dataset(&path, format!("sample {} has no sub-frames", e.id)));
            }
            let base = dir.join(&e.id);
            let gt = base.join("gt");
            let (w, h) = (e.width, e.height);
            let input = load_sized(base.join("I.png"), w, h, 3)?;
            let background = load_sized(base.join("B.png"), w, h, 3)?;
            let renderings = (0..e.n_subframes)
                .map(|i| {
                    let f = load_sized(gt.join(frame_name("F", i)), w, h, 3)?;
                    let m = load_sized(gt.join(frame_name("M", i)), w, h, 1)?;
                    Rendering::new(f, m)
                })
                .collect::<Result<Vec<_>>>()?;
            let gt_stack = RenderingStack::new(renderings)?;
            let traj_path = gt.join("traj.csv");
            let points = read_traj(&traj_path, e.n_subframes)?;
            let radius = match extract_trajectory(&gt_stack) {
                Ok(t) => t.radius,
                Err(Error::NoObject) => None,
                Err(err) => return Err(err),
            };
            let gt_traj = Trajectory::new(points, radius).map_err(|err| Error::dataset(&traj_path, err.to_string()))?;
            Ok(SynthSample {
                id: e.id,
                input,
                background,
                gt_stack,
                gt_traj,
                spec: e.scene,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, manifest.generator))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formation::compose_subframes;
    use crate::synth::sample_scene;

    #[test]
    fn empty_list_writes_only_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&[], dir.path(), serde_json::Value::Null).unwrap();
        let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(entries, vec![std::ffi::OsString::from("manifest.json")]);
        assert!(read_dataset(dir.path()).unwrap().0.is_empty());
    }

    #[test]
    fn single_sample_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample_scene(3, (40, 36), 6).unwrap();
        write_dataset(std::slice::from_ref(&s), dir.path(), serde_json::json!({"k": 1})).unwrap();
        let (back, generator) = read_dataset(dir.path()).unwrap();
        assert_eq!(generator, serde_json::json!({"k": 1}));
        let r = &back[0];
        assert_eq!(r.id, s.id);
        assert_eq!(r.spec, s.spec);
        assert!(r.input.max_abs_diff(&s.input) <= 1.0 / 510.0 + 1e-12);
        assert!(r.background.max_abs_diff(&s.background) <= 1.0 / 510.0 + 1e-12);
        for (a, b) in r.gt_stack.renderings().iter().zip(s.gt_stack.renderings()) {
            assert!(a.f.max_abs_diff(&b.f) <= 1.0 / 510.0 + 1e-12);
            assert!(a.m.max_abs_diff(&b.m) <= 1.0 / 131070.0 + 1e-12);
        }
        assert_eq!(r.gt_traj.points, s.gt_traj.points);
        let recomposed = compose_subframes(&r.gt_stack, &r.background).unwrap();
        assert!(recomposed.max_abs_diff(&r.input) <= 2.0 / 255.0);
    }

    #[test]
    fn ten_samples_keep_order_and_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let seeds = [9u64, 2, 7, 40, 1, 33, 5, 18, 11, 0];
        let samples: Vec<_> = seeds.iter().map(|&s| sample_scene(s, (32, 32), 3).unwrap()).collect();
        write_dataset(&samples, dir.path(), serde_json::Value::Null).unwrap();
        let (back, _) = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 10);
        for ((a, b), seed) in back.iter().zip(&samples).zip(seeds) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.spec.seed, seed);
            assert_eq!(a.spec, b.spec);
            assert_eq!(a.gt_stack.len(), b.gt_stack.len());
        }
    }

    #[test]
    fn malformed_layout_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("manifest.json"), "{err}");

        let s = sample_scene(4, (32, 32), 3).unwrap();
        write_dataset(std::slice::from_ref(&s), dir.path(), serde_json::Value::Null).unwrap();
        let victim = dir.path().join(&s.id).join("gt").join("M_02.png");
        fs::remove_file(&victim).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("M_02.png"), "{err}");

        fs::write(dir.path().join("manifest.json"), "{\"version\": 1, \"samples\": [], \"extra\": 0}").unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }

    #[test]
    fn rejects_unsafe_ids() {
        let mut s = sample_scene(4, (32, 32), 2).unwrap();
        s.id = "../escape".into();
        let dir = tempfile::tempdir().unwrap();
        assert!(write_dataset(&[s], dir.path(), serde_json::Value::Null).is_err());
    }
}
