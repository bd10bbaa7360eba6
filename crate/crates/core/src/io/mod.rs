//! File formats: depth codecs, segment maps, scene files and intrinsics.

pub mod codec;
pub mod scene;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use codec::{decode_depth, decode_segments, encode_depth, encode_segments, DecodedDepth, DepthFileMeta, DepthFormat, EncodeParams};
pub use scene::{load_scene, save_scene, LoadedScene, SceneBox, SceneCamera, SceneSpec, SCHEMA_VERSION};

use crate::error::Result;
use crate::geom::{CameraIntrinsics, DepthMap, SegmentMap};

/// Camera description stored next to a depth file: either a horizontal field
/// of view or explicit pinhole parameters. Image size comes from the depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntrinsicsFile {
    Pinhole { fx: f64, fy: f64, cx: f64, cy: f64 },
    Fov { fov_deg: f64 },
}

impl IntrinsicsFile {
    pub fn resolve(&self, width: u32, height: u32) -> Result<CameraIntrinsics> {
        match *self {
            IntrinsicsFile::Fov { fov_deg } => CameraIntrinsics::from_fov(fov_deg, width, height),
            IntrinsicsFile::Pinhole { fx, fy, cx, cy } => CameraIntrinsics::new(width, height, fx, fy, cx, cy),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

pub fn read_depth(path: &Path, camera: IntrinsicsFile) -> Result<DepthMap> {
    let decoded = decode_depth(&std::fs::read(path)?)?;
    let k = camera.resolve(decoded.width, decoded.height)?;
    decoded.into_map(k)
}

pub fn read_segments(path: &Path) -> Result<SegmentMap> {
    decode_segments(&std::fs::read(path)?)
}

pub fn write_depth(path: &Path, map: &DepthMap, format: DepthFormat, params: EncodeParams) -> Result<()> {
    std::fs::write(path, encode_depth(map, format, params)?)?;
    Ok(())
}
