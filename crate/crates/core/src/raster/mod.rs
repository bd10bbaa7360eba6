//! Deterministic z-buffer renderer for metric depth maps.
//!
//! Pixel `(u, v)` is sampled at image coordinate `(u, v)`; the stored value is
//! camera-frame z of the nearest surface, interpolated perspective-correctly
//! (1/z is affine in screen space). Pixels hitting nothing get `far_m`.
//! Ties on z keep the lowest triangle index, and tiles only ever see
//! triangles in index order, so the result does not depend on how rows are
//! split across threads.

mod oracle;

pub use oracle::render_depth_ray_oracle;

use nalgebra::Point3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{box_mesh, CameraIntrinsics, DepthMap, OrientedBox3D, TriangleMesh, DEGENERATE_AREA};

/// Surfaces closer than this (meters) are clipped.
pub const NEAR_PLANE: f64 = 1e-4;

#[derive(Debug, Clone, Default)]
pub struct RenderScene {
    pub meshes: Vec<TriangleMesh>,
    pub boxes: Vec<OrientedBox3D>,
    pub floor_y: Option<f64>,
    pub ceiling_y: Option<f64>,
    pub far_m: f64,
}

/// Which scene element a rendered triangle came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Mesh(usize),
    Box(usize),
    Floor,
    Ceiling,
}

/// Flattened triangle soup with provenance.
#[derive(Debug, Clone, Default)]
pub struct SceneTriangles {
    pub triangles: Vec<[Point3<f64>; 3]>,
    pub sources: Vec<Source>,
}

impl RenderScene {
    pub fn new(far_m: f64) -> Self {
        Self {
            far_m,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.far_m.is_finite() && self.far_m > 0.0) {
            return Err(Error::InvalidScene(format!("far_m must be positive, got {}", self.far_m)));
        }
        let too_far = self
            .meshes
            .iter()
            .flat_map(|m| m.vertices.iter().copied())
            .chain(self.boxes.iter().flat_map(|b| b.corners()))
            .find(|p| !(p.z < self.far_m));
        if let Some(p) = too_far {
            return Err(Error::InvalidScene(format!(
                "vertex at z={} is not closer than far_m={}",
                p.z, self.far_m
            )));
        }
        Ok(())
    }

    /// Plan-view (x, z) bounds of meshes and boxes.
    fn plan_bounds(&self) -> Option<([f64; 2], [f64; 2])> {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let mut any = false;
        let pts = self
            .meshes
            .iter()
            .flat_map(|m| m.vertices.iter().copied())
            .chain(self.boxes.iter().flat_map(|b| b.corners()));
        for p in pts {
            any = true;
            lo = [lo[0].min(p.x), lo[1].min(p.z)];
            hi = [hi[0].max(p.x), hi[1].max(p.z)];
        }
        any.then_some((lo, hi))
    }

    /// Horizontal quad at height `y`, four times the plan bounds on each side.
    fn horizontal_quad(&self, y: f64) -> [[Point3<f64>; 3]; 2] {
        let (lo, hi) = self
            .plan_bounds()
            .unwrap_or(([-self.far_m, 0.0], [self.far_m, self.far_m]));
        let c = [(lo[0] + hi[0]) * 0.5, (lo[1] + hi[1]) * 0.5];
        let half = [
            2.0 * (hi[0] - lo[0]).max(1.0),
            2.0 * (hi[1] - lo[1]).max(1.0),
        ];
        let p = |sx: f64, sz: f64| Point3::new(c[0] + sx * half[0], y, c[1] + sz * half[1]);
        let (a, b, cc, d) = (p(-1.0, -1.0), p(1.0, -1.0), p(1.0, 1.0), p(-1.0, 1.0));
        [[a, b, cc], [a, cc, d]]
    }

    /// Triangles in submission order: meshes, boxes, floor, ceiling.
    pub fn triangles(&self) -> SceneTriangles {
        let mut out = SceneTriangles::default();
        for (i, m) in self.meshes.iter().enumerate() {
            for t in 0..m.triangles.len() {
                out.triangles.push(m.triangle(t));
                out.sources.push(Source::Mesh(i));
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            let m = box_mesh(b);
            for t in 0..m.triangles.len() {
                out.triangles.push(m.triangle(t));
                out.sources.push(Source::Box(i));
            }
        }
        if let Some(y) = self.floor_y {
            for t in self.horizontal_quad(y) {
                out.triangles.push(t);
                out.sources.push(Source::Floor);
            }
        }
        if let Some(y) = self.ceiling_y {
            for t in self.horizontal_quad(y) {
                out.triangles.push(t);
                out.sources.push(Source::Ceiling);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    /// Rows per parallel tile; 0 renders single-threaded.
    pub tile_rows: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { tile_rows: 16 }
    }
}

/// A clipped, projected triangle ready for scan conversion.
struct ScreenTri {
    index: u32,
    uv: [[f64; 2]; 3],
    inv_z: [f64; 3],
    area: f64,
    rows: (usize, usize),
    cols: (usize, usize),
}

fn clip_near(tri: &[Point3<f64>; 3]) -> Vec<Point3<f64>> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let (ina, inb) = (a.z >= NEAR_PLANE, b.z >= NEAR_PLANE);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = NEAR_PLANE;
            out.push(p);
        }
    }
    out
}

fn prepare(scene: &SceneTriangles, cam: &CameraIntrinsics) -> Vec<ScreenTri> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    let mut out = Vec::new();
    for (index, tri) in scene.triangles.iter().enumerate() {
        let area3 = 0.5 * (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm();
        if !(area3 > DEGENERATE_AREA) {
            continue;
        }
        let poly = clip_near(tri);
        for k in 1..poly.len().saturating_sub(1) {
            let verts = [poly[0], poly[k], poly[k + 1]];
            let uv = verts.map(|p| cam.project([p.x, p.y, p.z]));
            let area = (uv[1][0] - uv[0][0]) * (uv[2][1] - uv[0][1]) - (uv[2][0] - uv[0][0]) * (uv[1][1] - uv[0][1]);
            if !(area.abs() > 1e-12) || !area.is_finite() {
                continue;
            }
            let umin = uv.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let umax = uv.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let vmin = uv.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            let vmax = uv.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
            if umax < 0.0 || vmax < 0.0 || umin > w - 1.0 || vmin > h - 1.0 {
                continue;
            }
            let cols = (umin.max(0.0).ceil() as usize, umax.min(w - 1.0).floor() as usize);
            let rows = (vmin.max(0.0).ceil() as usize, vmax.min(h - 1.0).floor() as usize);
            if cols.0 > cols.1 || rows.0 > rows.1 {
                continue;
            }
            out.push(ScreenTri {
                index: index as u32,
                uv,
                inv_z: verts.map(|p| 1.0 / p.z),
                area,
                rows,
                cols,
            });
        }
    }
    out
}

/// Scan-converts `tris` into rows `[row0, row0 + depth.len() / width)`.
fn raster_band(tris: &[ScreenTri], width: usize, row0: usize, depth: &mut [f64], ids: &mut [u32]) {
    let rows = depth.len() / width;
    let row1 = row0 + rows;
    for t in tris {
        if t.rows.1 < row0 || t.rows.0 >= row1 {
            continue;
        }
        let [a, b, c] = t.uv;
        let tol = -1e-9 * t.area.abs();
        let inv_area = 1.0 / t.area;
        for v in t.rows.0.max(row0)..=t.rows.1.min(row1 - 1) {
            let y = v as f64;
            for u in t.cols.0..=t.cols.1 {
                let x = u as f64;
                let w0 = ((b[0] - x) * (c[1] - y) - (c[0] - x) * (b[1] - y)) * inv_area.signum();
                let w1 = ((c[0] - x) * (a[1] - y) - (a[0] - x) * (c[1] - y)) * inv_area.signum();
                let w2 = ((a[0] - x) * (b[1] - y) - (b[0] - x) * (a[1] - y)) * inv_area.signum();
                if w0 < tol || w1 < tol || w2 < tol {
                    continue;
                }
                let s = inv_area.abs();
                let inv_z = (w0 * t.inv_z[0] + w1 * t.inv_z[1] + w2 * t.inv_z[2]) * s;
                let z = 1.0 / inv_z;
                let k = (v - row0) * width + u;
                if z < depth[k] {
                    depth[k] = z;
                    ids[k] = t.index;
                }
            }
        }
    }
}

/// Depth plus the index (into [`RenderScene::triangles`]) of the winning
/// triangle per pixel, `u32::MAX` where nothing was hit.
pub fn render_depth_with_ids(
    scene: &RenderScene,
    cam: &CameraIntrinsics,
    opts: RenderOptions,
) -> Result<(DepthMap, Vec<u32>, SceneTriangles)> {
    scene.validate()?;
    let tris_all = scene.triangles();
    let tris = prepare(&tris_all, cam);
    let width = cam.width as usize;
    let n = cam.pixel_count();
    let mut depth = vec![f64::INFINITY; n];
    let mut ids = vec![u32::MAX; n];
    if opts.tile_rows == 0 {
        raster_band(&tris, width, 0, &mut depth, &mut ids);
    } else {
        let chunk = opts.tile_rows * width;
        depth
            .par_chunks_mut(chunk)
            .zip(ids.par_chunks_mut(chunk))
            .enumerate()
            .for_each(|(i, (d, id))| raster_band(&tris, width, i * opts.tile_rows, d, id));
    }
    let far = scene.far_m;
    let data: Vec<f32> = depth.iter().map(|&z| z.min(far) as f32).collect();
    Ok((DepthMap::new(data, *cam)?, ids, tris_all))
}

pub fn render_depth_with(scene: &RenderScene, cam: &CameraIntrinsics, opts: RenderOptions) -> Result<DepthMap> {
    render_depth_with_ids(scene, cam, opts).map(|(d, _, _)| d)
}

/// Renders the z-depth of `scene` from a camera at the origin looking down +z.
pub fn render_depth(scene: &RenderScene, cam: &CameraIntrinsics) -> Result<DepthMap> {
    render_depth_with(scene, cam, RenderOptions::default())
}

/// Per-pixel source labels: `0` for background, otherwise `1 + box index` for
/// boxes; meshes, floor and ceiling map to `0`.
pub fn box_labels(ids: &[u32], tris: &SceneTriangles) -> Vec<u32> {
    ids.iter()
        .map(|&i| match tris.sources.get(i as usize) {
            Some(Source::Box(b)) => *b as u32 + 1,
            _ => 0,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn cam(w: u32, h: u32) -> CameraIntrinsics {
        CameraIntrinsics::from_fov(60.0, w, h).unwrap()
    }

    fn quad_at(z: f64, half: f64) -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::new(-half, -half, z),
                Point3::new(half, -half, z),
                Point3::new(half, half, z),
                Point3::new(-half, half, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn fronto_parallel_quad() {
        let mut scene = RenderScene::new(20.0);
        scene.meshes.push(quad_at(3.0, 100.0));
        let d = render_depth(&scene, &cam(40, 30)).unwrap();
        assert!(d.data().iter().all(|&z| (z - 3.0).abs() < 1e-6));
    }

    #[test]
    fn empty_scene_is_far() {
        let d = render_depth(&RenderScene::new(20.0), &cam(16, 12)).unwrap();
        assert!(d.data().iter().all(|&z| z == 20.0));
    }

    #[test]
    fn vertex_beyond_far_is_rejected() {
        let mut scene = RenderScene::new(2.0);
        scene.meshes.push(quad_at(3.0, 1.0));
        assert!(matches!(render_depth(&scene, &cam(8, 8)), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn triangle_behind_camera_is_invisible() {
        let mut scene = RenderScene::new(10.0);
        scene.meshes.push(quad_at(-2.0, 5.0));
        let d = render_depth(&scene, &cam(16, 16)).unwrap();
        assert!(d.data().iter().all(|&z| z == 10.0));
    }

    #[test]
    fn straddling_near_plane_is_clipped() {
        // slanted floor running from behind the camera to z = 5
        let floor = TriangleMesh::new(
            vec![
                Point3::new(-5.0, -1.0, -2.0),
                Point3::new(5.0, -1.0, -2.0),
                Point3::new(5.0, -1.0, 5.0),
                Point3::new(-5.0, -1.0, 5.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let mut scene = RenderScene::new(10.0);
        scene.meshes.push(floor);
        let k = cam(32, 32);
        let d = render_depth(&scene, &k).unwrap();
        let oracle = render_depth_ray_oracle(&scene, &k).unwrap();
        for (a, b) in d.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-4 || (a - b).abs() > 1.0);
        }
        // bottom centre row sees the floor at z = fy * 1 / (v - cy)
        let v = 31u32;
        let expected = k.fy / (v as f64 - k.cy);
        assert!((d.get(16, v) as f64 - expected).abs() < 1e-5);
    }

    #[test]
    fn nearer_triangle_wins_regardless_of_order() {
        let mut a = RenderScene::new(20.0);
        a.meshes.push(quad_at(5.0, 100.0));
        a.meshes.push(quad_at(3.0, 0.5));
        let mut b = RenderScene::new(20.0);
        b.meshes.push(quad_at(3.0, 0.5));
        b.meshes.push(quad_at(5.0, 100.0));
        let k = cam(32, 32);
        assert_eq!(render_depth(&a, &k).unwrap(), render_depth(&b, &k).unwrap());
    }

    #[test]
    fn box_labels_identify_boxes() {
        let mut scene = RenderScene::new(20.0);
        scene
            .boxes
            .push(OrientedBox3D::new(Point3::new(0.0, 0.0, 4.0), Vector3::new(0.5, 0.5, 0.5), 0.2).unwrap());
        let (d, ids, tris) = render_depth_with_ids(&scene, &cam(32, 32), RenderOptions::default()).unwrap();
        let labels = box_labels(&ids, &tris);
        for (z, l) in d.data().iter().zip(&labels) {
            assert_eq!(*l == 1, *z < 20.0);
        }
    }
}
