//! Condition predicates: does a generated image's depth honour the condition?

use serde::Serialize;

use super::boxes::{box_proxy, BoxOptions};
use crate::error::{Error, Result};
use crate::geom::{median_of, obb_iou, DepthMap, OrientedBox3D, SegmentMap, DEFAULT_IOU_SAMPLES};

pub const DEFAULT_TAU_REL: f64 = 0.05;
pub const DEFAULT_ETA: f64 = 0.01;
pub const DEFAULT_IOU_THETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckMode {
    Exact,
    Boundary,
    Boxes,
}

/// How generated depth is rescaled before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleAlignment {
    /// Compare raw values.
    #[default]
    None,
    /// Multiply by `median(cond / gen)` over valid pixels.
    MedianRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxMatch {
    /// Index into the specified box list.
    pub specified: usize,
    /// Index into the fitted box list, if matched.
    pub fitted: Option<usize>,
    pub segment_id: Option<u32>,
    pub iou: f64,
    pub center_distance_m: Option<f64>,
    pub volume_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub mode: CheckMode,
    pub passed: bool,
    /// Exact: fraction of pixels with relative error above tau. Boundary:
    /// fraction of pixels above the bound. Boxes: fraction of specified
    /// boxes not matched at the IoU threshold.
    pub violation_fraction: f64,
    /// Mean per-pixel violation in meters over valid pixels.
    pub mean_violation_m: f64,
    /// Exact mode only: mean relative error after alignment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_relative_error: Option<f64>,
    /// Factor applied to generated depth before comparison.
    pub scale: f64,
    pub valid_pixels: usize,
    pub width: u32,
    pub height: u32,
    /// Row-major, meters, zero where valid pixels conform or data is missing.
    /// Empty in boxes mode.
    #[serde(skip)]
    pub per_pixel_violation: Vec<f32>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<BoxMatch>,
}

fn check_shapes(gen: &DepthMap, cond: &DepthMap) -> Result<()> {
    if gen.width() != cond.width() || gen.height() != cond.height() {
        return Err(Error::invalid(format!(
            "generated depth is {}x{} but condition is {}x{}",
            gen.width(),
            gen.height(),
            cond.width(),
            cond.height()
        )));
    }
    Ok(())
}

fn valid_pairs(gen: &DepthMap, cond: &DepthMap) -> Vec<usize> {
    (0..gen.data().len())
        .filter(|&i| gen.is_valid_at(i) && cond.is_valid_at(i))
        .collect()
}

fn alignment_scale(gen: &DepthMap, cond: &DepthMap, valid: &[usize], align: ScaleAlignment) -> f64 {
    match align {
        ScaleAlignment::None => 1.0,
        ScaleAlignment::MedianRatio => {
            let mut r: Vec<f64> = valid
                .iter()
                .map(|&i| cond.data()[i] as f64 / gen.data()[i] as f64)
                .collect();
            median_of(&mut r)
        }
    }
}

pub fn check_exact(gen: &DepthMap, cond: &DepthMap, tau_rel: f64) -> Result<ConditionReport> {
    check_exact_with(gen, cond, tau_rel, ScaleAlignment::MedianRatio)
}

/// Passes when the mean relative error after alignment is at most `tau_rel`.
pub fn check_exact_with(gen: &DepthMap, cond: &DepthMap, tau_rel: f64, align: ScaleAlignment) -> Result<ConditionReport> {
    check_shapes(gen, cond)?;
    if !(tau_rel > 0.0) {
        return Err(Error::invalid("tau_rel must be positive"));
    }
    let valid = valid_pairs(gen, cond);
    if valid.is_empty() {
        return Err(Error::invalid("no pixel is valid in both maps"));
    }
    let s = alignment_scale(gen, cond, &valid, align);
    let mut per_pixel = vec![0f32; gen.data().len()];
    let (mut rel_sum, mut abs_sum, mut over) = (0.0, 0.0, 0usize);
    for &i in &valid {
        let c = cond.data()[i] as f64;
        let diff = (s * gen.data()[i] as f64 - c).abs();
        per_pixel[i] = diff as f32;
        abs_sum += diff;
        rel_sum += diff / c;
        over += usize::from(diff / c > tau_rel);
    }
    let n = valid.len() as f64;
    let mean_rel = rel_sum / n;
    Ok(ConditionReport {
        mode: CheckMode::Exact,
        passed: mean_rel <= tau_rel,
        violation_fraction: over as f64 / n,
        mean_violation_m: abs_sum / n,
        mean_relative_error: Some(mean_rel),
        scale: s,
        valid_pixels: valid.len(),
        width: gen.width(),
        height: gen.height(),
        per_pixel_violation: per_pixel,
        boxes: Vec::new(),
    })
}

/// Upper-bound check with raw (unaligned) values.
pub fn check_boundary(gen: &DepthMap, cond: &DepthMap, tau_rel: f64, eta: f64) -> Result<ConditionReport> {
    check_boundary_with(gen, cond, tau_rel, eta, ScaleAlignment::None)
}

/// Passes when at most a fraction `eta` of valid pixels exceed `(1 + tau_rel)·cond`.
pub fn check_boundary_with(
    gen: &DepthMap,
    cond: &DepthMap,
    tau_rel: f64,
    eta: f64,
    align: ScaleAlignment,
) -> Result<ConditionReport> {
    check_shapes(gen, cond)?;
    if !(tau_rel >= 0.0 && (0.0..=1.0).contains(&eta)) {
        return Err(Error::invalid("tau_rel must be non-negative and eta in [0, 1]"));
    }
    let valid = valid_pairs(gen, cond);
    if valid.is_empty() {
        return Err(Error::invalid("no pixel is valid in both maps"));
    }
    let s = alignment_scale(gen, cond, &valid, align);
    let mut per_pixel = vec![0f32; gen.data().len()];
    let (mut sum, mut over) = (0.0, 0usize);
    for &i in &valid {
        let bound = (1.0 + tau_rel) * cond.data()[i] as f64;
        let v = (s * gen.data()[i] as f64 - bound).max(0.0);
        per_pixel[i] = v as f32;
        sum += v;
        over += usize::from(v > 0.0);
    }
    let n = valid.len() as f64;
    let fraction = over as f64 / n;
    Ok(ConditionReport {
        mode: CheckMode::Boundary,
        passed: fraction <= eta,
        violation_fraction: fraction,
        mean_violation_m: sum / n,
        mean_relative_error: None,
        scale: s,
        valid_pixels: valid.len(),
        width: gen.width(),
        height: gen.height(),
        per_pixel_violation: per_pixel,
        boxes: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxCheckOptions {
    pub iou_theta: f64,
    pub iou_samples: usize,
    pub seed: u64,
    pub proxy: BoxOptions,
}

impl Default for BoxCheckOptions {
    fn default() -> Self {
        Self {
            iou_theta: DEFAULT_IOU_THETA,
            iou_samples: DEFAULT_IOU_SAMPLES,
            seed: 0,
            proxy: BoxOptions::default(),
        }
    }
}

/// Fits boxes to the generated segments and greedily matches them to the
/// specified boxes by descending IoU; passes when every specified box finds a
/// partner at or above `iou_theta`.
pub fn check_boxes(
    gen: &DepthMap,
    gen_segments: &SegmentMap,
    boxes: &[OrientedBox3D],
    opts: &BoxCheckOptions,
) -> Result<ConditionReport> {
    let fitted = box_proxy(gen, gen_segments, &opts.proxy)?.boxes;
    let mut pairs = Vec::new();
    for (i, s) in boxes.iter().enumerate() {
        for (j, f) in fitted.iter().enumerate() {
            let iou = obb_iou(s, &f.bbox, opts.iou_samples, opts.seed)?;
            if iou > 0.0 {
                pairs.push((iou, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut matches: Vec<BoxMatch> = (0..boxes.len())
        .map(|i| BoxMatch {
            specified: i,
            fitted: None,
            segment_id: None,
            iou: 0.0,
            center_distance_m: None,
            volume_ratio: None,
        })
        .collect();
    let mut used = vec![false; fitted.len()];
    for (iou, i, j) in pairs {
        if matches[i].fitted.is_some() || used[j] {
            continue;
        }
        used[j] = true;
        let f = &fitted[j].bbox;
        matches[i] = BoxMatch {
            specified: i,
            fitted: Some(j),
            segment_id: Some(fitted[j].segment_id),
            iou,
            center_distance_m: Some((f.center - boxes[i].center).norm()),
            volume_ratio: Some(f.volume() / boxes[i].volume()),
        };
    }
    let failing = matches.iter().filter(|m| m.iou < opts.iou_theta).count();
    let distances: Vec<f64> = matches.iter().filter_map(|m| m.center_distance_m).collect();
    Ok(ConditionReport {
        mode: CheckMode::Boxes,
        passed: failing == 0,
        violation_fraction: if boxes.is_empty() { 0.0 } else { failing as f64 / boxes.len() as f64 },
        mean_violation_m: if distances.is_empty() {
            0.0
        } else {
            distances.iter().sum::<f64>() / distances.len() as f64
        },
        mean_relative_error: None,
        scale: 1.0,
        valid_pixels: gen.valid_count(),
        width: gen.width(),
        height: gen.height(),
        per_pixel_violation: Vec::new(),
        boxes: matches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::CameraIntrinsics;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::from_fov(50.0, 40, 30).unwrap()
    }

    fn ramp() -> DepthMap {
        DepthMap::from_fn(cam(), |u, v| 1.0 + 0.05 * u as f32 + 0.02 * v as f32).unwrap()
    }

    fn scaled(d: &DepthMap, mut f: impl FnMut(f32) -> f32) -> DepthMap {
        DepthMap::new(d.data().iter().map(|&z| f(z)).collect(), *d.intrinsics()).unwrap()
    }

    #[test]
    fn exact_identity_passes_with_zero_error() {
        let c = ramp();
        let r = check_exact(&c, &c, DEFAULT_TAU_REL).unwrap();
        assert!(r.passed);
        assert_eq!(r.mean_relative_error, Some(0.0));
    }

    #[test]
    fn exact_scale_is_aligned_away() {
        let c = ramp();
        let r = check_exact(&scaled(&c, |z| 2.0 * z), &c, DEFAULT_TAU_REL).unwrap();
        assert!(r.passed);
        assert_eq!(r.scale, 0.5);
        assert_eq!(r.mean_relative_error, Some(0.0));
    }

    #[test]
    fn exact_uniform_noise_fails() {
        // E|U(-0.2, 0.2)| = 0.1
        let c = DepthMap::filled(2.0, CameraIntrinsics::from_fov(50.0, 200, 200).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = scaled(&c, |z| z * (1.0 + rng.random_range(-0.2f32..0.2)));
        let r = check_exact(&g, &c, DEFAULT_TAU_REL).unwrap();
        assert!(!r.passed);
        assert!((r.mean_relative_error.unwrap() - 0.1).abs() < 0.005, "{r:?}");
    }

    #[test]
    fn boundary_trivial_cases() {
        let c = ramp();
        let same = check_boundary(&c, &c, DEFAULT_TAU_REL, DEFAULT_ETA).unwrap();
        assert!(same.passed);
        assert_eq!(same.violation_fraction, 0.0);

        let half = check_boundary(&scaled(&c, |z| 0.5 * z), &c, DEFAULT_TAU_REL, DEFAULT_ETA).unwrap();
        assert!(half.passed);

        let two = DepthMap::filled(2.0, cam()).unwrap();
        let plus = check_boundary(&scaled(&two, |z| z + 1.0), &two, DEFAULT_TAU_REL, DEFAULT_ETA).unwrap();
        assert!(!plus.passed);
        assert_eq!(plus.violation_fraction, 1.0);
        assert!((plus.mean_violation_m - 0.9).abs() < 1e-9);
    }

    #[test]
    fn empty_box_list_passes_vacuously() {
        let d = DepthMap::filled(2.0, cam()).unwrap();
        let seg = SegmentMap::new(40, 30, vec![0; 1200]).unwrap();
        let r = check_boxes(&d, &seg, &[], &BoxCheckOptions::default()).unwrap();
        assert!(r.passed);
        assert!(r.boxes.is_empty());
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let a = ramp();
        let b = DepthMap::filled(1.0, CameraIntrinsics::from_fov(50.0, 10, 10).unwrap()).unwrap();
        assert!(check_exact(&a, &b, 0.05).is_err());
        assert!(check_boundary(&a, &b, 0.05, 0.01).is_err());
    }
}
