use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::obb::OrientedBox3D;
use crate::error::{Error, Result};

pub const DEFAULT_IOU_SAMPLES: usize = 100_000;
pub const MIN_IOU_SAMPLES: usize = 10_000;

fn interval_overlap(c0: f64, h0: f64, c1: f64, h1: f64) -> f64 {
    ((c0 + h0).min(c1 + h1) - (c0 - h0).max(c1 - h1)).max(0.0)
}

/// Exact IoU of two boxes sharing a canonical yaw.
fn iou_same_yaw(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    // Express b's center in a's frame; the frames only differ by translation.
    let ca = a.to_local(&a.center);
    let cb = a.to_local(&b.center);
    let inter = (0..3)
        .map(|k| interval_overlap(ca[k], a.half_extents[k], cb[k], b.half_extents[k]))
        .product::<f64>();
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Intersection over union of two boxes.
///
/// Boxes with identical canonical yaw use the closed form. Otherwise the
/// union's axis-aligned bound is split into a `k³` grid and one jittered
/// sample is drawn per cell from a `seed`-determined stream; the estimator is
/// symmetric in its arguments because the grid and jitter depend only on the
/// (order-independent) bound.
pub fn obb_iou(a: &OrientedBox3D, b: &OrientedBox3D, samples: usize, seed: u64) -> Result<f64> {
    if samples < MIN_IOU_SAMPLES {
        return Err(Error::invalid(format!(
            "obb_iou needs at least {MIN_IOU_SAMPLES} samples, got {samples}"
        )));
    }
    if a.yaw == b.yaw {
        return Ok(iou_same_yaw(a, b));
    }
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in a.corners().iter().chain(b.corners().iter()) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let k = (samples as f64).cbrt().ceil() as usize;
    let cell = (hi - lo) / k as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut in_a, mut in_b, mut both) = (0u64, 0u64, 0u64);
    for i in 0..k {
        for j in 0..k {
            for l in 0..k {
                let jitter: [f64; 3] = rng.random();
                let p = Point3::new(
                    lo.x + (i as f64 + jitter[0]) * cell.x,
                    lo.y + (j as f64 + jitter[1]) * cell.y,
                    lo.z + (l as f64 + jitter[2]) * cell.z,
                );
                let (ia, ib) = (a.contains(&p, 0.0), b.contains(&p, 0.0));
                in_a += ia as u64;
                in_b += ib as u64;
                both += (ia && ib) as u64;
            }
        }
    }
    let union = in_a + in_b - both;
    Ok(if union == 0 { 0.0 } else { both as f64 / union as f64 })
}
