//! Synthetic scenes shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::TAU;

use nalgebra::{Point2, Point3, Vector3};
use proxy_depth::geom::{backproject_depth, CameraIntrinsics, DepthMap, OrientedBox3D, Polygon2D, SegmentMap, TriangleMesh};
use proxy_depth::io::{SceneBox, SceneCamera, SceneSpec};
use proxy_depth::raster::{box_labels, render_depth_with_ids, RenderOptions, RenderScene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A closed room seen from the origin, with and without furniture.
pub struct Room {
    pub empty: SceneSpec,
    pub furnished: SceneSpec,
}

fn edge_distance(poly: &[Point2<f64>], p: Point2<f64>) -> f64 {
    (0..poly.len())
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            let ab = b - a;
            let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            (a + ab * t - p).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

fn inside(poly: &[Point2<f64>], p: Point2<f64>) -> bool {
    let mut c = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + n - 1) % n]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            c = !c;
        }
    }
    c
}

/// Star-shaped footprint of `n` vertices around the origin, so every wall
/// faces the camera.
fn star_footprint(rng: &mut impl Rng, n: usize) -> Vec<Point2<f64>> {
    loop {
        let phase = rng.random_range(0.0..TAU);
        let step = TAU / n as f64;
        let verts: Vec<Point2<f64>> = (0..n)
            .map(|k| {
                let a = phase + step * (k as f64 + rng.random_range(-0.3..0.3));
                let r = rng.random_range(3.5..7.0);
                Point2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        if edge_distance(&verts, Point2::origin()) > 2.5 {
            return verts;
        }
    }
}

fn furniture(rng: &mut impl Rng, poly: &[Point2<f64>], y_min: f64, count: usize) -> Vec<SceneBox> {
    let mut out = Vec::new();
    let mut tries = 0;
    while out.len() < count && tries < 1000 {
        tries += 1;
        let half: [f64; 3] = [rng.random_range(0.2..0.6), rng.random_range(0.2..0.5), rng.random_range(0.2..0.6)];
        let reach = half[0].hypot(half[2]);
        let c = Point2::new(rng.random_range(-7.0..7.0), rng.random_range(-7.0..7.0));
        if !inside(poly, c) || edge_distance(poly, c) < reach + 0.3 || c.coords.norm() < reach + 0.5 {
            continue;
        }
        out.push(SceneBox {
            center: [c.x, y_min + half[1], c.y],
            half_extents: half,
            yaw_deg: rng.random_range(-45.0..45.0),
            label: Some(format!("item {}", out.len())),
        });
    }
    out
}

/// Smaller principal spread of the visible points projected onto the floor.
pub fn plan_spread(depth: &DepthMap) -> f64 {
    let pts: Vec<(f64, f64)> = backproject_depth(depth).points.iter().map(|p| (p.x, p.z)).collect();
    let n = pts.len() as f64;
    let (mx, mz) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
    let (mut sxx, mut szz, mut sxz) = (0.0, 0.0, 0.0);
    for (x, z) in &pts {
        sxx += (x - mx) * (x - mx) / n;
        szz += (z - mz) * (z - mz) / n;
        sxz += (x - mx) * (z - mz) / n;
    }
    let tr = 0.5 * (sxx + szz);
    let det = sxx * szz - sxz * sxz;
    (tr - (tr * tr - det).max(0.0).sqrt()).max(0.0).sqrt()
}

/// A room of 4 to 8 walls with 0 to 6 cuboids standing on the floor.
///
/// Views are redrawn when their plan projection is a line, which the
/// boundary pipeline rejects by contract, or when floor or ceiling cover less
/// than [`MIN_CAP_SHARE`] of the frame, so percentile heights would land on
/// wall pixels.
pub fn random_room(rng: &mut impl Rng, width: u32, height: u32) -> Room {
    loop {
        let room = draw_room(rng, width, height);
        let depth = room.empty.render_depth(None).unwrap();
        let cloud = backproject_depth(&depth);
        let share = |y: f64| cloud.points.iter().filter(|p| (p.y - y).abs() < 1e-4).count() as f64 / cloud.len() as f64;
        if plan_spread(&depth) > 0.1 && share(room.empty.y_min) >= MIN_CAP_SHARE && share(room.empty.y_max) >= MIN_CAP_SHARE {
            return room;
        }
    }
}

pub const MIN_CAP_SHARE: f64 = 0.03;

fn draw_room(rng: &mut impl Rng, width: u32, height: u32) -> Room {
    let n = rng.random_range(4..=8);
    let verts = star_footprint(rng, n);
    let y_min = -rng.random_range(1.2..1.7);
    let y_max = rng.random_range(0.8..1.5);
    let footprint = Polygon2D::from_any_winding(verts.clone()).expect("star polygon is simple");
    let empty = SceneSpec {
        camera: SceneCamera {
            fov_deg: rng.random_range(43.0..=57.0),
            width,
            height,
        },
        footprint,
        y_min,
        y_max,
        include_floor: true,
        include_ceiling: true,
        far_m: 30.0,
        boxes: Vec::new(),
    };
    let count = rng.random_range(0..=6);
    let furnished = SceneSpec {
        boxes: furniture(rng, &verts, y_min, count),
        ..empty.clone()
    };
    Room { empty, furnished }
}

/// Boxes with a ground-truth render and exact per-box masks.
pub struct BoxScene {
    pub boxes: Vec<OrientedBox3D>,
    pub depth: DepthMap,
    pub segments: SegmentMap,
    pub cam: CameraIntrinsics,
}

pub fn render_boxes(boxes: &[OrientedBox3D], cam: &CameraIntrinsics, far_m: f64) -> (DepthMap, Vec<u32>) {
    let mut scene = RenderScene::new(far_m);
    scene.boxes = boxes.to_vec();
    let (depth, ids, tris) = render_depth_with_ids(&scene, cam, RenderOptions::default()).unwrap();
    (depth, box_labels(&ids, &tris))
}

fn projects_inside(b: &OrientedBox3D, cam: &CameraIntrinsics, margin: f64) -> bool {
    b.corners().iter().all(|p| {
        let [u, v] = cam.project([p.x, p.y, p.z]);
        p.z > 0.5
            && u >= margin
            && v >= margin
            && u <= cam.width as f64 - 1.0 - margin
            && v <= cam.height as f64 - 1.0 - margin
    })
}

/// 1 to 4 cuboids below eye level, fully in frame, none occluding another,
/// each covering at least `min_area` pixels.
pub fn random_box_scene(rng: &mut impl Rng, width: u32, height: u32, min_area: usize) -> BoxScene {
    let far_m = 30.0;
    'scene: loop {
        let cam = CameraIntrinsics::from_fov(rng.random_range(43.0..=57.0), width, height).unwrap();
        let k = rng.random_range(1..=4);
        let half_fov = 0.5 * cam.fov_deg().to_radians();
        let mut boxes = Vec::new();
        for i in 0..k {
            let mut placed = false;
            for _ in 0..200 {
                let sector = (-half_fov + (2.0 * i as f64 + 1.0) * half_fov / k as f64)
                    + rng.random_range(-0.3..0.3) * half_fov / k as f64;
                let z = rng.random_range(3.0..5.5);
                let hy = rng.random_range(0.25..0.5);
                let top = -rng.random_range(0.35..0.8);
                let b = OrientedBox3D::new(
                    Point3::new(z * sector.tan(), top - hy, z),
                    Vector3::new(rng.random_range(0.3..0.6), hy, rng.random_range(0.3..0.6)),
                    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                )
                .unwrap();
                if projects_inside(&b, &cam, 2.0) {
                    boxes.push(b.with_label(format!("box {i}")));
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'scene;
            }
        }
        let (depth, labels) = render_boxes(&boxes, &cam, far_m);
        for (i, b) in boxes.iter().enumerate() {
            let (_, alone) = render_boxes(std::slice::from_ref(b), &cam, far_m);
            let own = alone.iter().filter(|&&l| l == 1).count();
            let together = labels.iter().filter(|&&l| l == i as u32 + 1).count();
            if own != together || own < min_area {
                continue 'scene;
            }
        }
        let segments = SegmentMap::new(width, height, labels).unwrap();
        return BoxScene {
            boxes,
            depth,
            segments,
            cam,
        };
    }
}

/// Positive depth map with a fraction of invalid pixels.
pub fn random_depth(rng: &mut impl Rng, width: u32, height: u32, invalid: f64) -> DepthMap {
    let cam = CameraIntrinsics::from_fov(50.0, width, height).unwrap();
    let lo = rng.random_range(0.3..2.0);
    let hi = lo + rng.random_range(0.5..30.0);
    DepthMap::from_fn(cam, |_, _| {
        if rng.random_bool(invalid) {
            0.0
        } else {
            rng.random_range(lo..hi) as f32
        }
    })
    .unwrap()
}

/// Random triangle soup in front of the camera.
pub fn random_triangles(rng: &mut impl Rng, count: usize) -> TriangleMesh {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for t in 0..count {
        let c = Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(2.0..8.0));
        for _ in 0..3 {
            vertices.push(c + Vector3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.0..1.0),
            ));
        }
        let b = 3 * t as u32;
        triangles.push([b, b + 1, b + 2]);
    }
    TriangleMesh::new(vertices, triangles).unwrap()
}

/// Pixels whose winning triangle differs from a neighbour's, dilated by one.
pub fn silhouette_mask(ids: &[u32], width: usize, height: usize) -> Vec<bool> {
    let at = |u: isize, v: isize| -> Option<u32> {
        (u >= 0 && v >= 0 && (u as usize) < width && (v as usize) < height).then(|| ids[v as usize * width + u as usize])
    };
    let mut edge = vec![false; ids.len()];
    for v in 0..height as isize {
        for u in 0..width as isize {
            let me = at(u, v).unwrap();
            edge[v as usize * width + u as usize] = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|(du, dv)| at(u + du, v + dv).is_some_and(|o| o != me));
        }
    }
    let mut out = edge.clone();
    for v in 0..height as isize {
        for u in 0..width as isize {
            if edge[v as usize * width + u as usize] {
                for dv in -1..=1 {
                    for du in -1..=1 {
                        if at(u + du, v + dv).is_some() {
                            out[(v + dv) as usize * width + (u + du) as usize] = true;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Fraction of pixels where `pred(a, b)` holds.
pub fn fraction(a: &DepthMap, b: &DepthMap, pred: impl Fn(f64, f64) -> bool) -> f64 {
    let hits = a
        .data()
        .iter()
        .zip(b.data())
        .filter(|(x, y)| pred(**x as f64, **y as f64))
        .count();
    hits as f64 / a.data().len() as f64
}
