use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{backproject_where, fit_min_obb_yaw, trim_detached_outliers, DepthMap, OrientedBox3D, SegmentMap};
use crate::io::SceneBox;
use crate::raster::{render_depth, RenderScene};

/// Smallest segment (in pixels) that gets a box.
pub const DEFAULT_MIN_MASK_AREA: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxOptions {
    pub min_mask_area: usize,
    /// Outlier trimming strength in robust sigmas.
    pub k_mad: f64,
    /// Background depth; `None` means twice the largest input depth.
    pub far_m: Option<f64>,
}

impl Default for BoxOptions {
    fn default() -> Self {
        Self {
            min_mask_area: DEFAULT_MIN_MASK_AREA,
            k_mad: 3.0,
            far_m: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    BelowMinArea,
    Degenerate,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::BelowMinArea => "below-min-area",
            SkipReason::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedBox {
    pub segment_id: u32,
    pub pixel_area: usize,
    #[serde(rename = "box")]
    pub bbox: OrientedBox3D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SkippedSegment {
    pub id: u32,
    pub pixel_area: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxPipelineResult {
    pub condition: DepthMap,
    pub boxes: Vec<FittedBox>,
    pub skipped_segments: Vec<SkippedSegment>,
}

impl BoxPipelineResult {
    /// Boxes in scene-file form (labelled by segment) plus skipped segments.
    /// The `boxes` member is accepted wherever a box list is expected.
    pub fn boxes_json(&self) -> serde_json::Value {
        let boxes: Vec<serde_json::Value> = self
            .boxes
            .iter()
            .map(|b| {
                let mut sb = SceneBox::from_box(&b.bbox);
                sb.label.get_or_insert_with(|| format!("segment {}", b.segment_id));
                serde_json::json!({
                    "segment_id": b.segment_id,
                    "pixel_area": b.pixel_area,
                    "center": sb.center,
                    "half_extents": sb.half_extents,
                    "yaw_deg": sb.yaw_deg,
                    "label": sb.label,
                })
            })
            .collect();
        serde_json::json!({ "boxes": boxes, "skipped_segments": self.skipped_segments })
    }
}

/// Fits one yaw-only box per large segment and renders the boxes.
pub fn box_proxy(depth: &DepthMap, segments: &SegmentMap, opts: &BoxOptions) -> Result<BoxPipelineResult> {
    if segments.width != depth.width() || segments.height != depth.height() {
        return Err(Error::invalid(format!(
            "segment map is {}x{} but depth is {}x{}",
            segments.width,
            segments.height,
            depth.width(),
            depth.height()
        )));
    }
    if !(opts.k_mad > 0.0) {
        return Err(Error::invalid("k_mad must be positive"));
    }
    let (boxes, skipped_segments) = fit_segment_boxes(depth, segments, opts);
    let max_depth = depth.max_depth().map(f64::from).unwrap_or(1.0);
    let far_m = match opts.far_m {
        Some(f) => f,
        None => {
            let deepest_corner = boxes
                .iter()
                .flat_map(|b| b.bbox.corners())
                .map(|p| p.z)
                .fold(0.0, f64::max);
            (2.0 * max_depth).max(1.5 * deepest_corner)
        }
    };
    let mut scene = RenderScene::new(far_m);
    scene.boxes = boxes.iter().map(|b| b.bbox.clone()).collect();
    let condition = render_depth(&scene, depth.intrinsics())?;
    Ok(BoxPipelineResult {
        condition,
        boxes,
        skipped_segments,
    })
}

fn fit_segment_boxes(depth: &DepthMap, segments: &SegmentMap, opts: &BoxOptions) -> (Vec<FittedBox>, Vec<SkippedSegment>) {
    let mut boxes = Vec::new();
    let mut skipped = Vec::new();
    for (&id, &area) in segments.areas().iter().filter(|(id, _)| **id != 0) {
        if area < opts.min_mask_area {
            skipped.push(SkippedSegment {
                id,
                pixel_area: area,
                reason: SkipReason::BelowMinArea,
            });
            continue;
        }
        let cloud = backproject_where(depth, |i| segments.labels[i] == id);
        let fit = if cloud.len() < 3 {
            None
        } else {
            fit_min_obb_yaw(&trim_detached_outliers(&cloud, opts.k_mad)).ok()
        };
        match fit {
            Some(bbox) => boxes.push(FittedBox {
                segment_id: id,
                pixel_area: area,
                bbox,
            }),
            None => {
                log::debug!("segment {id}: box fit is degenerate");
                skipped.push(SkippedSegment {
                    id,
                    pixel_area: area,
                    reason: SkipReason::Degenerate,
                })
            }
        }
    }
    (boxes, skipped)
}
