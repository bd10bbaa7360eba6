//! Gravity-aligned oriented boxes and minimal-volume fitting.
//!
//! A box with yaw `θ` has its local x axis along `(cos θ, 0, -sin θ)` and its
//! local z axis along `(sin θ, 0, cos θ)`; i.e. the box is rotated by `θ`
//! about +y. Every box is stored in canonical form with `θ ∈ [-π/4, π/4)`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use nalgebra::{Point2, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use crate::error::{Error, Result};

/// Smallest half-extent a fitted box is given along a flat axis.
pub const MIN_HALF_EXTENT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3D {
    pub center: Point3<f64>,
    pub half_extents: Vector3<f64>,
    pub yaw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Maps `yaw` into `[-π/4, π/4)`, reporting whether x/z extents must swap.
pub fn canonical_yaw(yaw: f64) -> (f64, bool) {
    let k = ((yaw + FRAC_PI_4) / FRAC_PI_2).floor();
    let mut y = yaw - k * FRAC_PI_2;
    let mut odd = (k as i64).rem_euclid(2) == 1;
    if y >= FRAC_PI_4 {
        y -= FRAC_PI_2;
        odd = !odd;
    } else if y < -FRAC_PI_4 {
        y += FRAC_PI_2;
        odd = !odd;
    }
    (y, odd)
}

impl OrientedBox3D {
    /// Builds a box, canonicalizing its yaw.
    pub fn new(center: Point3<f64>, half_extents: Vector3<f64>, yaw: f64) -> Result<Self> {
        if !(center.coords.iter().all(|c| c.is_finite()) && yaw.is_finite()) {
            return Err(Error::invalid("box center and yaw must be finite"));
        }
        if !half_extents.iter().all(|h| h.is_finite() && *h > 0.0) {
            return Err(Error::invalid(format!(
                "box half extents must be positive, got {:?}",
                half_extents.as_slice()
            )));
        }
        let (yaw, swap) = canonical_yaw(yaw);
        let half_extents = if swap {
            Vector3::new(half_extents.z, half_extents.y, half_extents.x)
        } else {
            half_extents
        };
        Ok(Self {
            center,
            half_extents,
            yaw,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    pub fn axis_x(&self) -> Vector3<f64> {
        Vector3::new(self.yaw.cos(), 0.0, -self.yaw.sin())
    }

    pub fn axis_z(&self) -> Vector3<f64> {
        Vector3::new(self.yaw.sin(), 0.0, self.yaw.cos())
    }

    /// World point expressed in box-local coordinates.
    #[inline]
    pub fn to_local(&self, p: &Point3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x - s * d.z, d.y, s * d.x + c * d.z)
    }

    #[inline]
    pub fn contains(&self, p: &Point3<f64>, tol: f64) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.half_extents.x + tol
            && l.y.abs() <= self.half_extents.y + tol
            && l.z.abs() <= self.half_extents.z + tol
    }

    /// Corners indexed by sign bits: bit 0 -> +x, bit 1 -> +y, bit 2 -> +z.
    pub fn corners(&self) -> [Point3<f64>; 8] {
        let ax = self.axis_x() * self.half_extents.x;
        let ay = Vector3::y() * self.half_extents.y;
        let az = self.axis_z() * self.half_extents.z;
        std::array::from_fn(|i| {
            let sx = if i & 1 != 0 { 1.0 } else { -1.0 };
            let sy = if i & 2 != 0 { 1.0 } else { -1.0 };
            let sz = if i & 4 != 0 { 1.0 } else { -1.0 };
            self.center + ax * sx + ay * sy + az * sz
        })
    }
}

fn plan(p: &Point3<f64>) -> Point2<f64> {
    Point2::new(p.x, p.z)
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts: Vec<_> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>| (a - o).perp(&(b - o));
    let mut hull: Vec<Point2<f64>> = Vec::with_capacity(2 * pts.len());
    for p in pts.iter() {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Minimum-area enclosing rectangle of a convex CCW polygon by rotating calipers.
///
/// Returns the unit direction of the rectangle edge that is flush with a hull edge.
pub fn min_area_rect_direction(hull: &[Point2<f64>]) -> Option<nalgebra::Vector2<f64>> {
    let n = hull.len();
    if n < 3 {
        return None;
    }
    let at = |i: usize| hull[i % n];
    let (mut right, mut top, mut left) = (0usize, 0usize, 0usize);
    let mut best: Option<(f64, nalgebra::Vector2<f64>)> = None;
    for i in 0..n {
        let e = (at(i + 1) - at(i)).normalize();
        let nrm = nalgebra::Vector2::new(-e.y, e.x);
        if i == 0 {
            right = 1;
        }
        let mut guard = 0;
        while (at(right + 1) - at(right)).dot(&e) > 0.0 && guard < n {
            right += 1;
            guard += 1;
        }
        if i == 0 {
            top = right;
        }
        guard = 0;
        while (at(top + 1) - at(top)).dot(&nrm) > 0.0 && guard < n {
            top += 1;
            guard += 1;
        }
        if i == 0 {
            left = top;
        }
        guard = 0;
        while (at(left + 1) - at(left)).dot(&e) < 0.0 && guard < n {
            left += 1;
            guard += 1;
        }
        let width = (at(right) - at(left)).dot(&e);
        let height = (at(top) - at(i)).dot(&nrm);
        let area = width * height;
        if best.map_or(true, |(a, _)| area < a) {
            best = Some((area, e));
        }
    }
    best.map(|(_, e)| e)
}

/// Tightest canonical box for `cloud` at a fixed yaw.
pub fn box_at_yaw(cloud: &PointCloud, yaw: f64) -> Result<OrientedBox3D> {
    if cloud.is_empty() {
        return Err(Error::degenerate("empty point cloud"));
    }
    let (s, c) = yaw.sin_cos();
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in &cloud.points {
        let l = Vector3::new(c * p.x - s * p.z, p.y, s * p.x + c * p.z);
        lo = lo.inf(&l);
        hi = hi.sup(&l);
    }
    let mid = (lo + hi) * 0.5;
    let half = ((hi - lo) * 0.5).map(|h| h.max(MIN_HALF_EXTENT));
    // local -> world is the transpose of the rotation above
    let center = Point3::new(c * mid.x + s * mid.z, mid.y, -s * mid.x + c * mid.z);
    OrientedBox3D::new(center, half, yaw)
}

fn plan_hull_checked(cloud: &PointCloud) -> Result<Vec<Point2<f64>>> {
    let plan_pts: Vec<_> = cloud.points.iter().map(plan).collect();
    let hull = convex_hull(&plan_pts);
    if hull.len() < 3 {
        return Err(Error::degenerate(
            "point cloud plan projection is collinear or has fewer than 3 distinct points",
        ));
    }
    Ok(hull)
}

/// Minimal-volume yaw-only box containing every point.
pub fn fit_min_obb_yaw(cloud: &PointCloud) -> Result<OrientedBox3D> {
    let hull = plan_hull_checked(cloud)?;
    let e = min_area_rect_direction(&hull).expect("hull has at least 3 vertices");
    // plan vector (x, z) = (cos θ, -sin θ)
    let yaw = (-e.y).atan2(e.x);
    box_at_yaw(cloud, yaw)
}

/// Exhaustive yaw sweep over `[0°, 90°)`; used to validate the caliper fit.
pub fn fit_obb_yaw_sweep(cloud: &PointCloud, step_deg: f64) -> Result<OrientedBox3D> {
    if !(step_deg > 0.0) {
        return Err(Error::invalid("sweep step must be positive"));
    }
    plan_hull_checked(cloud)?;
    let steps = (90.0 / step_deg).ceil() as usize;
    let mut best: Option<OrientedBox3D> = None;
    for i in 0..steps {
        let b = box_at_yaw(cloud, (i as f64 * step_deg).to_radians())?;
        if best.as_ref().map_or(true, |cur| b.volume() < cur.volume()) {
            best = Some(b);
        }
    }
    Ok(best.expect("at least one sweep step"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ObbFitMode {
    /// Rotating calipers on the plan-view hull.
    #[default]
    YawOnly,
    /// Coarse 5° Euler grid refined by a local 0.5° sweep; boxes may tilt.
    Sweep3d,
}

/// Box with an arbitrary rotation, produced by the 3D sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeBox {
    pub center: Point3<f64>,
    pub half_extents: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

impl FreeBox {
    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    pub fn contains(&self, p: &Point3<f64>, tol: f64) -> bool {
        let l = self.rotation.inverse() * (p - self.center);
        (0..3).all(|k| l[k].abs() <= self.half_extents[k] + tol)
    }
}

fn free_box_at(cloud: &PointCloud, rotation: Rotation3<f64>) -> FreeBox {
    let inv = rotation.inverse();
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in &cloud.points {
        let l = inv * p.coords;
        lo = lo.inf(&l);
        hi = hi.sup(&l);
    }
    let mid = (lo + hi) * 0.5;
    FreeBox {
        center: Point3::from(rotation * mid),
        half_extents: ((hi - lo) * 0.5).map(|h| h.max(MIN_HALF_EXTENT)),
        rotation,
    }
}

fn sweep_grid(cloud: &PointCloud, center_deg: [f64; 3], half_span_deg: f64, step_deg: f64, best: &mut FreeBox) {
    let n = (half_span_deg / step_deg).round() as i64;
    for i in -n..=n {
        for j in -n..=n {
            for k in -n..=n {
                let roll = (center_deg[0] + i as f64 * step_deg).to_radians();
                let pitch = (center_deg[1] + j as f64 * step_deg).to_radians();
                let yaw = (center_deg[2] + k as f64 * step_deg).to_radians();
                let cand = free_box_at(cloud, Rotation3::from_euler_angles(roll, pitch, yaw));
                if cand.volume() < best.volume() {
                    *best = cand;
                }
            }
        }
    }
}

/// Approximate unrestricted minimal-volume box by Euler-angle sweeps.
pub fn fit_obb_sweep3d(cloud: &PointCloud) -> Result<FreeBox> {
    if cloud.len() < 4 {
        return Err(Error::degenerate("3D box sweep needs at least 4 points"));
    }
    let mut best = free_box_at(cloud, Rotation3::identity());
    let mut best_angles = [0.0; 3];
    for i in 0..18 {
        for j in 0..18 {
            for k in 0..18 {
                let angles = [i as f64 * 5.0, j as f64 * 5.0, k as f64 * 5.0];
                let rot = Rotation3::from_euler_angles(
                    angles[0].to_radians(),
                    angles[1].to_radians(),
                    angles[2].to_radians(),
                );
                let cand = free_box_at(cloud, rot);
                if cand.volume() < best.volume() {
                    best = cand;
                    best_angles = angles;
                }
            }
        }
    }
    sweep_grid(cloud, best_angles, 5.0, 0.5, &mut best);
    Ok(best)
}
