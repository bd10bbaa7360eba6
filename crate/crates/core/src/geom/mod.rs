//! Camera model, back-projection, footprint extraction and box fitting.

mod camera;
mod cloud;
mod depth;
pub mod footprint;
mod iou;
mod mesh;
pub mod obb;
pub mod polygon;
pub mod profile;

pub use camera::CameraIntrinsics;
pub use cloud::{backproject_depth, backproject_pixel, backproject_where, trim_detached_outliers, trim_outliers, PointCloud, MAD_NOISE_REL, MAD_TO_SIGMA, MIN_GAP_REL};
pub(crate) use cloud::median as median_of;
pub use depth::{DepthMap, SegmentMap, INVALID_DEPTH};
pub use footprint::{extract_footprint, extract_footprint_polygon, FootprintOptions};
pub use iou::{obb_iou, DEFAULT_IOU_SAMPLES, MIN_IOU_SAMPLES};
pub use mesh::{box_mesh, depth_to_mesh, extrude_polygon_to_planes, TriangleMesh, DEGENERATE_AREA};
pub use obb::{canonical_yaw, fit_min_obb_yaw, fit_obb_sweep3d, fit_obb_yaw_sweep, FreeBox, ObbFitMode, OrientedBox3D};
pub use polygon::Polygon2D;
pub use profile::{column_profile, profile_footprint, ProfileOptions};

