//! Corpus preparation: (caption, condition, image) triplets plus a manifest.
//!
//! Input layout, per sample `<stem>`:
//!
//! * `<stem>.depth.pfm` or `<stem>.depth.png` — estimated depth
//! * `<stem>.txt` — caption
//! * `<stem>.png`, `<stem>.jpg` or `<stem>.jpeg` — the image
//! * `<stem>.seg.png` — segment ids (boxes mode only)
//! * `<stem>.intrinsics.json` — optional camera; otherwise a field of view is
//!   drawn uniformly from `[43, 57]` degrees from a stream keyed by the run
//!   seed and the sample's index in stem order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::boundary::{boundary_proxy, BoundaryOptions};
use super::boxes::{box_proxy, BoxOptions};
use crate::error::{Error, Result};
use crate::geom::DepthMap;
use crate::io::{decode_depth, read_segments, write_depth, DepthFormat, EncodeParams, IntrinsicsFile};

pub const FOV_RANGE_DEG: (f64, f64) = (43.0, 57.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyMode {
    Boundary,
    Boxes,
}

impl fmt::Display for ProxyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProxyMode::Boundary => "boundary",
            ProxyMode::Boxes => "boxes",
        })
    }
}

impl FromStr for ProxyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boundary" => Ok(ProxyMode::Boundary),
            "boxes" => Ok(ProxyMode::Boxes),
            other => Err(Error::invalid(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: String,
    pub caption: String,
    pub condition_path: String,
    pub mode: ProxyMode,
    pub fov_deg: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetOptions {
    pub boundary: BoundaryOptions,
    pub boxes: BoxOptions,
    pub format: DepthFormat,
    /// Use this field of view for every sample instead of sampling.
    pub fov_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedSample {
    pub stem: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetReport {
    pub entries: Vec<ManifestEntry>,
    pub skipped: Vec<SkippedSample>,
}

impl DatasetReport {
    /// One JSON object per line, keys sorted.
    pub fn manifest_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let v = serde_json::to_value(e).expect("manifest entries serialize");
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }
}

/// Field of view for sample `index` of a run seeded with `seed`.
pub fn sample_fov_deg(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.random_range(FOV_RANGE_DEG.0..=FOV_RANGE_DEG.1)
}

fn discover(input_dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut samples = Vec::new();
    for entry in std::fs::read_dir(input_dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        for suffix in [".depth.pfm", ".depth.png"] {
            if let Some(stem) = name.strip_suffix(suffix) {
                samples.push((stem.to_string(), path.clone()));
            }
        }
    }
    samples.sort();
    samples.dedup_by(|a, b| a.0 == b.0);
    Ok(samples)
}

fn find_image(dir: &Path, stem: &str) -> Result<PathBuf> {
    ["png", "jpg", "jpeg"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::invalid(format!("no image found for sample '{stem}'")))
}

fn condition_extension(format: DepthFormat) -> &'static str {
    match format {
        DepthFormat::Pfm => "pfm",
        DepthFormat::Png16 | DepthFormat::Png8inv => "png",
    }
}

fn process_sample(
    input_dir: &Path,
    out_dir: &Path,
    stem: &str,
    depth_path: &Path,
    index: u64,
    mode: ProxyMode,
    seed: u64,
    opts: &DatasetOptions,
) -> Result<ManifestEntry> {
    let caption = std::fs::read_to_string(input_dir.join(format!("{stem}.txt")))?.trim().to_string();
    let image = find_image(input_dir, stem)?;
    let intrinsics_path = input_dir.join(format!("{stem}.intrinsics.json"));
    let camera = if intrinsics_path.is_file() {
        IntrinsicsFile::load(&intrinsics_path)?
    } else {
        IntrinsicsFile::Fov {
            fov_deg: opts.fov_deg.unwrap_or_else(|| sample_fov_deg(seed, index)),
        }
    };
    let decoded = decode_depth(&std::fs::read(depth_path)?)?;
    let k = camera.resolve(decoded.width, decoded.height)?;
    let depth: DepthMap = decoded.into_map(k)?;
    let condition = match mode {
        ProxyMode::Boundary => boundary_proxy(&depth, &opts.boundary)?.condition,
        ProxyMode::Boxes => {
            let seg = read_segments(&input_dir.join(format!("{stem}.seg.png")))?;
            box_proxy(&depth, &seg, &opts.boxes)?.condition
        }
    };
    let cond_path = out_dir.join(format!("{stem}.cond.{}", condition_extension(opts.format)));
    write_depth(&cond_path, &condition, opts.format, EncodeParams::default())?;
    Ok(ManifestEntry {
        image_path: image.display().to_string(),
        caption,
        condition_path: cond_path.display().to_string(),
        mode,
        fov_deg: k.fov_deg(),
        seed,
    })
}

/// Runs the proxy pipeline over every sample in `input_dir`, writing
/// conditions into `out_dir`. Failed samples are logged and skipped.
pub fn prepare_dataset(
    input_dir: &Path,
    out_dir: &Path,
    mode: ProxyMode,
    seed: u64,
    opts: &DatasetOptions,
) -> Result<DatasetReport> {
    let samples = discover(input_dir)?;
    std::fs::create_dir_all(out_dir)?;
    let results: Vec<Result<ManifestEntry>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, (stem, path))| process_sample(input_dir, out_dir, stem, path, i as u64, mode, seed, opts))
        .collect();
    let mut report = DatasetReport::default();
    for ((stem, _), r) in samples.into_iter().zip(results) {
        match r {
            Ok(e) => report.entries.push(e),
            Err(e) => {
                log::warn!("skipping sample '{stem}': {e}");
                report.skipped.push(SkippedSample {
                    stem,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(report)
}
