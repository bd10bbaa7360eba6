use nalgebra::Point3;

use super::cloud::backproject_pixel;
use super::depth::{DepthMap, INVALID_DEPTH};
use super::obb::OrientedBox3D;
use super::polygon::Polygon2D;
use crate::error::{Error, Result};

/// Triangles below this area (m^2) count as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::invalid(format!("triangle {t:?} indexes past {n} vertices")));
        }
        Ok(Self { vertices, triangles })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Appends `other`, re-indexing its triangles.
    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }
}

/// Grid mesh over the back-projected pixels of `depth`.
///
/// Every valid pixel becomes a vertex. Each pixel quad contributes up to two
/// triangles; a triangle is dropped when it touches an invalid pixel or when
/// two of its corners differ in depth by more than `max_edge_jump` times the
/// smaller of the two.
pub fn depth_to_mesh(depth: &DepthMap, max_edge_jump: f64) -> Result<TriangleMesh> {
    if !(max_edge_jump > 0.0) {
        return Err(Error::invalid("max_edge_jump must be positive"));
    }
    let (w, h) = (depth.width() as usize, depth.height() as usize);
    let data = depth.data();
    let mut index = vec![u32::MAX; w * h];
    let mut vertices = Vec::with_capacity(depth.valid_count());
    for (i, &d) in data.iter().enumerate() {
        if d != INVALID_DEPTH {
            index[i] = vertices.len() as u32;
            vertices.push(backproject_pixel(depth, (i % w) as u32, (i / w) as u32, d as f64));
        }
    }

    let continuous = |a: usize, b: usize| {
        let (da, db) = (data[a] as f64, data[b] as f64);
        (da - db).abs() <= max_edge_jump * da.min(db)
    };
    let mut triangles = Vec::new();
    for v in 0..h.saturating_sub(1) {
        for u in 0..w.saturating_sub(1) {
            let p00 = v * w + u;
            let p10 = p00 + 1;
            let p01 = p00 + w;
            let p11 = p01 + 1;
            // Counter-clockwise as seen from the camera (image v points down).
            for tri in [[p00, p01, p10], [p10, p01, p11]] {
                if tri.iter().any(|&p| index[p] == u32::MAX) {
                    continue;
                }
                if continuous(tri[0], tri[1]) && continuous(tri[1], tri[2]) && continuous(tri[0], tri[2]) {
                    triangles.push([index[tri[0]], index[tri[1]], index[tri[2]]]);
                }
            }
        }
    }
    Ok(TriangleMesh { vertices, triangles })
}

/// Vertical wall quads, one per polygon edge, spanning `[y_min, y_max]`.
pub fn extrude_polygon_to_planes(poly: &Polygon2D, y_min: f64, y_max: f64) -> Result<TriangleMesh> {
    if !(y_min < y_max) {
        return Err(Error::invalid(format!("y_min ({y_min}) must be below y_max ({y_max})")));
    }
    let verts = poly.vertices();
    let n = verts.len() as u32;
    let mut vertices = Vec::with_capacity(2 * verts.len());
    for p in verts {
        vertices.push(Point3::new(p.x, y_min, p.y));
        vertices.push(Point3::new(p.x, y_max, p.y));
    }
    let mut triangles = Vec::with_capacity(2 * verts.len());
    for i in 0..n {
        let j = (i + 1) % n;
        let (bi, ti, bj, tj) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        triangles.push([bi, bj, tj]);
        triangles.push([bi, tj, ti]);
    }
    Ok(TriangleMesh { vertices, triangles })
}

/// Twelve-triangle cuboid.
pub fn box_mesh(b: &OrientedBox3D) -> TriangleMesh {
    let corners = b.corners();
    // corner index bits: x -> 1, y -> 2, z -> 4
    const FACES: [[u32; 4]; 6] = [
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
    ];
    let mut triangles = Vec::with_capacity(12);
    for [a, b, c, d] in FACES {
        triangles.push([a, b, c]);
        triangles.push([a, c, d]);
    }
    TriangleMesh {
        vertices: corners.to_vec(),
        triangles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::camera::CameraIntrinsics;
    use nalgebra::{Point2, Vector3};

    fn flat(w: u32, h: u32, d: f32) -> DepthMap {
        let k = CameraIntrinsics::from_fov(60.0, w, h).unwrap();
        DepthMap::filled(d, k).unwrap()
    }

    #[test]
    fn two_by_two_constant() {
        let m = depth_to_mesh(&flat(2, 2, 3.0), 0.1).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles.len(), 2);
    }

    #[test]
    fn ten_by_ten_constant() {
        // Count-by-construction oracle: every interior quad yields two triangles.
        let expected: usize = (0..9).flat_map(|_| 0..9).map(|_| 2).sum();
        let m = depth_to_mesh(&flat(10, 10, 3.0), 0.1).unwrap();
        assert_eq!(m.triangles.len(), expected);
        assert_eq!(expected, 162);
        for t in 0..m.triangles.len() {
            assert!(m.triangle_area(t) > DEGENERATE_AREA);
        }
    }

    #[test]
    fn discontinuity_culls_touching_triangles() {
        let k = CameraIntrinsics::from_fov(60.0, 2, 2).unwrap();
        let d = DepthMap::new(vec![1.0, 1.0, 1.0, 10.0], k).unwrap();
        let m = depth_to_mesh(&d, 0.1).unwrap();
        assert_eq!(m.triangles.len(), 1);
        assert!(m.triangles.iter().all(|t| !t.contains(&3)));
    }

    #[test]
    fn sentinel_pixels_are_skipped() {
        let k = CameraIntrinsics::from_fov(60.0, 3, 2).unwrap();
        let d = DepthMap::new(vec![1.0, 0.0, 1.0, 1.0, 1.0, 1.0], k).unwrap();
        let m = depth_to_mesh(&d, 0.1).unwrap();
        assert_eq!(m.vertices.len(), 5);
        // Only the right quad's lower triangle avoids pixel 1.
        assert_eq!(m.triangles.len(), 1);
        assert!(depth_to_mesh(&flat(1, 1, 2.0), 0.1).unwrap().is_empty());
    }

    #[test]
    fn extrusion_counts() {
        let square = Polygon2D::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ])
        .unwrap();
        let m = extrude_polygon_to_planes(&square, 0.0, 2.0).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.triangles.len(), 8);

        let tri = Polygon2D::new(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)]).unwrap();
        assert_eq!(extrude_polygon_to_planes(&tri, 0.0, 1.0).unwrap().triangles.len(), 6);
        assert!(matches!(
            extrude_polygon_to_planes(&tri, 1.0, 1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn box_mesh_is_closed_and_sized() {
        let b = OrientedBox3D::new(Point3::new(1.0, 2.0, 3.0), Vector3::new(0.5, 1.0, 1.5), 0.3).unwrap();
        let m = box_mesh(&b);
        assert_eq!(m.triangles.len(), 12);
        let area: f64 = (0..12).map(|t| m.triangle_area(t)).sum();
        let (a, b2, c) = (1.0, 2.0, 3.0);
        assert!((area - 2.0 * (a * b2 + b2 * c + a * c)).abs() < 1e-9);
        // every edge shared by exactly two triangles
        let mut edges = std::collections::HashMap::new();
        for t in &m.triangles {
            for k in 0..3 {
                let (i, j) = (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]));
                *edges.entry((i, j)).or_insert(0) += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2));
    }
}
