use nalgebra::{Point3, Vector3};

use super::{RenderScene, NEAR_PLANE};
use crate::error::Result;
use crate::geom::{CameraIntrinsics, DepthMap, DEGENERATE_AREA};

/// Ray/triangle hit distance along `dir` (whose z is 1, so the result is z-depth).
fn intersect(dir: &Vector3<f64>, tri: &[Point3<f64>; 3]) -> Option<f64> {
    // Solve o + t d = a + s e1 + r e2 for (t, s, r), origin at 0.
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = -tri[0].coords;
    let s = tvec.dot(&p) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&s) {
        return None;
    }
    let q = tvec.cross(&e1);
    let r = dir.dot(&q) * inv;
    if r < -1e-12 || s + r > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t >= NEAR_PLANE).then_some(t)
}

/// Reference renderer: exact ray casting through every pixel against every
/// triangle. Quadratic cost, meant for small images.
pub fn render_depth_ray_oracle(scene: &RenderScene, cam: &CameraIntrinsics) -> Result<DepthMap> {
    scene.validate()?;
    let tris: Vec<[Point3<f64>; 3]> = scene
        .triangles()
        .triangles
        .into_iter()
        .filter(|t| 0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm() > DEGENERATE_AREA)
        .collect();
    DepthMap::from_fn(*cam, |u, v| {
        let d = Vector3::from(cam.ray_dir(u as f64, v as f64));
        let z = tris
            .iter()
            .filter_map(|t| intersect(&d, t))
            .fold(scene.far_m, f64::min);
        z as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::TriangleMesh;

    #[test]
    fn zero_area_triangle_ignored() {
        let mut scene = RenderScene::new(9.0);
        scene.meshes.push(
            TriangleMesh::new(
                vec![Point3::new(0.0, 0.0, 2.0), Point3::new(1.0, 0.0, 2.0), Point3::new(2.0, 0.0, 2.0)],
                vec![[0, 1, 2]],
            )
            .unwrap(),
        );
        let k = CameraIntrinsics::from_fov(60.0, 8, 8).unwrap();
        let d = render_depth_ray_oracle(&scene, &k).unwrap();
        assert!(d.data().iter().all(|&z| z == 9.0));
        let r = super::super::render_depth(&scene, &k).unwrap();
        assert_eq!(r, d);
    }

    #[test]
    fn behind_camera_is_far() {
        let mut scene = RenderScene::new(9.0);
        scene.meshes.push(
            TriangleMesh::new(
                vec![Point3::new(-9.0, -9.0, -1.0), Point3::new(9.0, -9.0, -1.0), Point3::new(0.0, 9.0, -1.0)],
                vec![[0, 1, 2]],
            )
            .unwrap(),
        );
        let k = CameraIntrinsics::from_fov(60.0, 8, 8).unwrap();
        assert!(render_depth_ray_oracle(&scene, &k).unwrap().data().iter().all(|&z| z == 9.0));
    }
}
