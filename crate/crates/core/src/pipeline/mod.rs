//! End-to-end pipelines: boundary and box proxies, condition checks and
//! dataset preparation.

pub mod boundary;
pub mod boxes;
pub mod check;
pub mod dataset;

pub use boundary::{boundary_proxy, BoundaryOptions, BoundaryResult, FootprintMethod};
pub use boxes::{box_proxy, BoxOptions, BoxPipelineResult, FittedBox, SkipReason, SkippedSegment, DEFAULT_MIN_MASK_AREA};
pub use check::{
    check_boundary, check_boundary_with, check_boxes, check_exact, check_exact_with, BoxCheckOptions, BoxMatch, CheckMode,
    ConditionReport, ScaleAlignment, DEFAULT_ETA, DEFAULT_IOU_THETA, DEFAULT_TAU_REL,
};
pub use dataset::{prepare_dataset, sample_fov_deg, DatasetOptions, DatasetReport, ManifestEntry, ProxyMode, SkippedSample};
