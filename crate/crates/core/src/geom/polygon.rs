use nalgebra::{Point2, Vector2};

use crate::error::{Error, Result};

/// Plan-view polygon in `(x, z)` meters: counter-clockwise, simple, implicitly closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon2D {
    vertices: Vec<Point2<f64>>,
}

impl Polygon2D {
    pub fn new(vertices: Vec<Point2<f64>>) -> Result<Self> {
        if let Some(problem) = polygon_problem(&vertices) {
            return Err(Error::invalid(problem));
        }
        Ok(Self { vertices })
    }

    /// Accepts either winding and reorders to counter-clockwise.
    pub fn from_any_winding(mut vertices: Vec<Point2<f64>>) -> Result<Self> {
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        Self::new(vertices)
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2<f64>, Point2<f64>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Even-odd containment test; boundary points may go either way.
    pub fn contains(&self, p: Point2<f64>) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn boundary_distance(&self, p: Point2<f64>) -> f64 {
        self.edges()
            .map(|(a, b)| segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Zero when `p` is inside, otherwise its distance to the boundary.
    pub fn outside_distance(&self, p: Point2<f64>) -> f64 {
        if self.contains(p) {
            0.0
        } else {
            self.boundary_distance(p)
        }
    }

    pub fn bounds(&self) -> (Point2<f64>, Point2<f64>) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }
}

pub fn signed_area(vertices: &[Point2<f64>]) -> f64 {
    let n = vertices.len();
    let mut twice = 0.0;
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
        twice += a.x * b.y - b.x * a.y;
    }
    0.5 * twice
}

/// Describes why `vertices` is not a valid polygon, if it is not.
pub fn polygon_problem(vertices: &[Point2<f64>]) -> Option<String> {
    if vertices.len() < 3 {
        return Some(format!("polygon needs at least 3 vertices, got {}", vertices.len()));
    }
    if vertices.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Some("polygon has non-finite coordinates".into());
    }
    if !is_simple(vertices) {
        return Some("polygon is self-intersecting".into());
    }
    if signed_area(vertices) <= 0.0 {
        return Some("polygon is not counter-clockwise".into());
    }
    None
}

fn cross(o: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    (a - o).perp(&(b - o))
}

fn on_segment(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

pub(crate) fn segments_intersect(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, d: Point2<f64>) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

/// No two non-adjacent edges touch and no vertex repeats.
pub fn is_simple(vertices: &[Point2<f64>]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        for j in i + 1..n {
            if vertices[i] == vertices[j] {
                return false;
            }
        }
    }
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            let (c, d) = (vertices[j], vertices[(j + 1) % n]);
            if adjacent {
                // Adjacent edges may only share their common vertex.
                let shared_is_b = j == i + 1;
                let (p, q, far) = if shared_is_b { (a, b, d) } else { (b, a, c) };
                if cross(p, q, far) == 0.0 && (far - q).dot(&(p - q)) > 0.0 {
                    return false;
                }
                continue;
            }
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

pub fn segment_distance(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn dp_recurse(points: &[Point2<f64>], first: usize, last: usize, eps: f64, keep: &mut [bool]) {
    if last <= first + 1 {
        return;
    }
    let (a, b) = (points[first], points[last]);
    let mut best = (first, -1.0);
    for (i, p) in points.iter().enumerate().take(last).skip(first + 1) {
        let d = segment_distance(*p, a, b);
        if d > best.1 {
            best = (i, d);
        }
    }
    if best.1 > eps {
        keep[best.0] = true;
        dp_recurse(points, first, best.0, eps, keep);
        dp_recurse(points, best.0, last, eps, keep);
    }
}

/// Douglas-Peucker on an open polyline; endpoints always survive.
pub fn douglas_peucker(points: &[Point2<f64>], eps: f64) -> Vec<Point2<f64>> {
    if points.len() < 3 {
        return points.to_vec();
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    dp_recurse(points, 0, points.len() - 1, eps, &mut keep);
    points
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect()
}

/// Douglas-Peucker on a closed ring.
///
/// The ring is split at its lexicographically smallest vertex and at the
/// vertex farthest from it; both chains are simplified independently.
pub fn douglas_peucker_closed(ring: &[Point2<f64>], eps: f64) -> Vec<Point2<f64>> {
    let n = ring.len();
    if n <= 3 {
        return ring.to_vec();
    }
    let start = (0..n)
        .min_by(|&i, &j| {
            ring[i]
                .x
                .total_cmp(&ring[j].x)
                .then(ring[i].y.total_cmp(&ring[j].y))
        })
        .unwrap();
    let rotated: Vec<_> = (0..n).map(|k| ring[(start + k) % n]).collect();
    let far = (1..n)
        .max_by(|&i, &j| {
            (rotated[i] - rotated[0])
                .norm_squared()
                .total_cmp(&(rotated[j] - rotated[0]).norm_squared())
                .then(j.cmp(&i))
        })
        .unwrap();
    let mut first = douglas_peucker(&rotated[..=far], eps);
    let mut closing: Vec<_> = rotated[far..].to_vec();
    closing.push(rotated[0]);
    let second = douglas_peucker(&closing, eps);
    first.pop();
    first.extend_from_slice(&second[..second.len() - 1]);
    first
}

/// Removes vertices lying on the line through their neighbours.
pub fn drop_collinear(ring: &[Point2<f64>], tol: f64) -> Vec<Point2<f64>> {
    let mut out: Vec<Point2<f64>> = ring.to_vec();
    loop {
        let n = out.len();
        if n <= 3 {
            return out;
        }
        let victim = (0..n).find(|&i| {
            let prev = out[(i + n - 1) % n];
            let next = out[(i + 1) % n];
            let e: Vector2<f64> = next - prev;
            let len = e.norm();
            len > 0.0 && (out[i] - prev).perp(&e).abs() / len <= tol && (out[i] - prev).dot(&e) > 0.0 && (next - out[i]).dot(&e) > 0.0
        });
        match victim {
            Some(i) => {
                out.remove(i);
            }
            None => return out,
        }
    }
}
