use nalgebra::Point3;

use super::depth::{DepthMap, INVALID_DEPTH};

/// World-frame points: x right, y up, z forward from the camera.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl FromIterator<Point3<f64>> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point3<f64>>>(iter: I) -> Self {
        Self {
            points: iter.into_iter().collect(),
        }
    }
}

/// Lifts pixel `(u, v)` with z-depth `d` into the camera frame.
#[inline]
pub fn backproject_pixel(depth: &DepthMap, u: u32, v: u32, d: f64) -> Point3<f64> {
    let k = depth.intrinsics();
    let [dx, dy, _] = k.ray_dir(u as f64, v as f64);
    Point3::new(dx * d, dy * d, d)
}

/// Back-projects every valid pixel in row-major order.
pub fn backproject_depth(depth: &DepthMap) -> PointCloud {
    backproject_where(depth, |_| true)
}

/// Back-projects the valid pixels whose row-major index passes `keep`.
pub fn backproject_where(depth: &DepthMap, mut keep: impl FnMut(usize) -> bool) -> PointCloud {
    let w = depth.width();
    let mut points = Vec::new();
    for (i, &d) in depth.data().iter().enumerate() {
        if d == INVALID_DEPTH || !keep(i) {
            continue;
        }
        let (u, v) = (i as u32 % w, i as u32 / w);
        points.push(backproject_pixel(depth, u, v, d as f64));
    }
    PointCloud { points }
}

/// Normal-consistency constant turning a MAD into a standard deviation.
pub const MAD_TO_SIGMA: f64 = 1.4826;

pub(crate) fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Drops points whose z is further than `k_mad` robust sigmas from the median z.
///
/// Returns the input untouched when the MAD is zero or when the filter would
/// remove every point.
pub fn trim_outliers(cloud: &PointCloud, k_mad: f64) -> PointCloud {
    if cloud.is_empty() {
        return cloud.clone();
    }
    let mut zs: Vec<f64> = cloud.points.iter().map(|p| p.z).collect();
    let med = median(&mut zs);
    let mut dev: Vec<f64> = cloud.points.iter().map(|p| (p.z - med).abs()).collect();
    let mad = median(&mut dev);
    if mad == 0.0 {
        return cloud.clone();
    }
    let limit = k_mad * MAD_TO_SIGMA * mad;
    let kept: Vec<_> = cloud
        .points
        .iter()
        .filter(|p| (p.z - med).abs() <= limit)
        .copied()
        .collect();
    if kept.is_empty() {
        cloud.clone()
    } else {
        PointCloud { points: kept }
    }
}

/// MADs below this fraction of the median z are f32 rounding, not spread.
pub const MAD_NOISE_REL: f64 = 1e-6;

/// z gaps narrower than this fraction of the median z never detach points.
pub const MIN_GAP_REL: f64 = 0.1;

/// Like [`trim_outliers`], but only drops points cut off from the bulk by a
/// gap in z wider than both the robust limit and [`MIN_GAP_REL`] of the median.
///
/// Surfaces seen at a grazing angle give long, sparsely sampled tails in z
/// that the plain rule would cut; isolated flying pixels are still removed. A
/// MAD at rounding level counts as zero.
pub fn trim_detached_outliers(cloud: &PointCloud, k_mad: f64) -> PointCloud {
    if cloud.is_empty() {
        return cloud.clone();
    }
    let mut zs: Vec<f64> = cloud.points.iter().map(|p| p.z).collect();
    let med = median(&mut zs);
    let mut dev: Vec<f64> = zs.iter().map(|z| (z - med).abs()).collect();
    let mad = median(&mut dev);
    if mad <= MAD_NOISE_REL * med.abs() {
        return cloud.clone();
    }
    let limit = k_mad * MAD_TO_SIGMA * mad;
    // zs is sorted by median()
    let lo_core = zs.partition_point(|&z| z < med - limit);
    let hi_core = zs.partition_point(|&z| z <= med + limit);
    if lo_core >= hi_core {
        return cloud.clone();
    }
    let gap = limit.max(MIN_GAP_REL * med.abs());
    let (mut lo, mut hi) = (lo_core, hi_core - 1);
    while lo > 0 && zs[lo] - zs[lo - 1] <= gap {
        lo -= 1;
    }
    while hi + 1 < zs.len() && zs[hi + 1] - zs[hi] <= gap {
        hi += 1;
    }
    let (z_lo, z_hi) = (zs[lo], zs[hi]);
    cloud.points.iter().filter(|p| p.z >= z_lo && p.z <= z_hi).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::camera::CameraIntrinsics;

    #[test]
    fn principal_pixel_maps_onto_axis() {
        let k = CameraIntrinsics::new(4, 4, 3.0, 3.0, 2.0, 2.0).unwrap();
        let mut data = vec![0.0; 16];
        data[2 * 4 + 2] = 2.0;
        let d = DepthMap::new(data, k).unwrap();
        let cloud = backproject_depth(&d);
        assert_eq!(cloud.points, vec![Point3::new(0.0, 0.0, 2.0)]);
    }

    #[test]
    fn unit_focal_corner_pixel() {
        let k = CameraIntrinsics::new(2, 2, 1.0, 1.0, 1.0, 1.0).unwrap();
        let d = DepthMap::filled(1.0, k).unwrap();
        let cloud = backproject_depth(&d);
        assert_eq!(cloud.len(), 4);
        assert_eq!(cloud.points[0], Point3::new(-1.0, 1.0, 1.0));
        // row-major order
        assert_eq!(cloud.points[1], Point3::new(0.0, 1.0, 1.0));
        assert_eq!(cloud.points[2], Point3::new(-1.0, 0.0, 1.0));
    }

    #[test]
    fn all_sentinel_gives_empty_cloud() {
        let k = CameraIntrinsics::from_fov(60.0, 8, 6).unwrap();
        let d = DepthMap::filled(INVALID_DEPTH, k).unwrap();
        assert!(backproject_depth(&d).is_empty());
    }

    fn cloud_with_z(zs: &[f64]) -> PointCloud {
        zs.iter().map(|&z| Point3::new(0.0, 0.0, z)).collect()
    }

    #[test]
    fn zero_mad_leaves_cloud_unchanged() {
        let mut zs = vec![2.0; 100];
        zs.push(50.0);
        let c = cloud_with_z(&zs);
        assert_eq!(trim_outliers(&c, 3.0), c);
        let same = cloud_with_z(&[1.5; 10]);
        assert_eq!(trim_outliers(&same, 3.0), same);
    }

    #[test]
    fn far_outlier_removed() {
        // 99 values evenly spread over [1.9, 2.1] plus one at 50:
        // median 2.0, MAD ~0.05, limit ~0.22 -> only the 50 is dropped.
        let mut zs: Vec<f64> = (0..99).map(|i| 1.9 + 0.2 * i as f64 / 98.0).collect();
        zs.push(50.0);
        let c = cloud_with_z(&zs);
        let t = trim_outliers(&c, 3.0);
        assert_eq!(t.len(), 99);
        assert!(t.points.iter().all(|p| p.z < 3.0));
    }

    #[test]
    fn huge_threshold_keeps_everything() {
        let mut zs: Vec<f64> = (0..99).map(|i| 1.9 + 0.2 * i as f64 / 98.0).collect();
        zs.push(50.0);
        let c = cloud_with_z(&zs);
        assert_eq!(trim_outliers(&c, 1e9), c);
    }
    #[test]
    fn detached_trim_keeps_dense_tail() {
        // dense cluster plus an evenly sampled ramp reaching well past 3 sigma
        let mut zs: Vec<f64> = (0..300).map(|i| 2.0 + 0.01 * (i % 7) as f64).collect();
        zs.extend((0..100).map(|i| 2.0 + 0.01 * i as f64));
        let c = cloud_with_z(&zs);
        assert!(trim_outliers(&c, 3.0).len() < c.len());
        assert_eq!(trim_detached_outliers(&c, 3.0), c);
    }

    #[test]
    fn detached_trim_drops_isolated_points() {
        let mut zs: Vec<f64> = (0..99).map(|i| 1.9 + 0.2 * i as f64 / 98.0).collect();
        zs.push(50.0);
        let t = trim_detached_outliers(&cloud_with_z(&zs), 3.0);
        assert_eq!(t.len(), 99);
        assert!(t.points.iter().all(|p| p.z < 3.0));
    }

    #[test]
    fn rounding_level_mad_counts_as_zero() {
        let mut zs: Vec<f64> = (0..60).map(|i| 4.0 + 1e-7 * (i % 3) as f64).collect();
        zs.extend((0..40).map(|i| 4.0 + 0.02 * i as f64));
        let c = cloud_with_z(&zs);
        assert_eq!(trim_detached_outliers(&c, 3.0), c);
    }
}
