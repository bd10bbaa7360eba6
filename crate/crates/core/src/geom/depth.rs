use serde::{Deserialize, Serialize};

use super::camera::CameraIntrinsics;
use crate::error::{Error, Result};

/// Value marking a pixel with no depth.
pub const INVALID_DEPTH: f32 = 0.0;

/// Dense metric z-depth, row-major, with the camera that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
    intrinsics: CameraIntrinsics,
}

impl DepthMap {
    pub fn new(data: Vec<f32>, intrinsics: CameraIntrinsics) -> Result<Self> {
        if data.len() != intrinsics.pixel_count() {
            return Err(Error::invalid(format!(
                "depth buffer has {} values, expected {}x{}",
                data.len(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        if let Some((i, d)) = data
            .iter()
            .enumerate()
            .find(|(_, d)| **d != INVALID_DEPTH && !(d.is_finite() && **d > 0.0))
        {
            return Err(Error::invalid(format!("depth value {d} at index {i} is not finite and positive")));
        }
        Ok(Self {
            width: intrinsics.width,
            height: intrinsics.height,
            data,
            intrinsics,
        })
    }

    pub fn filled(value: f32, intrinsics: CameraIntrinsics) -> Result<Self> {
        Self::new(vec![value; intrinsics.pixel_count()], intrinsics)
    }

    /// Builds a map from a closure evaluated at every pixel `(u, v)`.
    pub fn from_fn(intrinsics: CameraIntrinsics, mut f: impl FnMut(u32, u32) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(intrinsics.pixel_count());
        for v in 0..intrinsics.height {
            for u in 0..intrinsics.width {
                data.push(f(u, v));
            }
        }
        Self::new(data, intrinsics)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn with_intrinsics(mut self, intrinsics: CameraIntrinsics) -> Result<Self> {
        if intrinsics.width != self.width || intrinsics.height != self.height {
            return Err(Error::invalid("intrinsics dimensions do not match the depth map"));
        }
        self.intrinsics = intrinsics;
        Ok(self)
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.data[v as usize * self.width as usize + u as usize]
    }

    #[inline]
    pub fn is_valid_at(&self, index: usize) -> bool {
        self.data[index] != INVALID_DEPTH
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d != INVALID_DEPTH).count()
    }

    pub fn max_depth(&self) -> Option<f32> {
        self.data
            .iter()
            .copied()
            .filter(|d| *d != INVALID_DEPTH)
            .fold(None, |acc, d| Some(acc.map_or(d, |a: f32| a.max(d))))
    }

    pub fn same_shape(&self, other_w: u32, other_h: u32) -> bool {
        self.width == other_w && self.height == other_h
    }
}

/// Per-pixel segment ids; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
}

impl SegmentMap {
    pub fn new(width: u32, height: u32, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "segment buffer has {} labels, expected {width}x{height}",
                labels.len()
            )));
        }
        Ok(Self { width, height, labels })
    }

    /// Pixel count per non-zero id, sorted by id.
    pub fn areas(&self) -> std::collections::BTreeMap<u32, usize> {
        let mut areas = std::collections::BTreeMap::new();
        for &l in self.labels.iter().filter(|l| **l != 0) {
            *areas.entry(l).or_insert(0) += 1;
        }
        areas
    }
}
