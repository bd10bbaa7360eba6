//! Footprint from the wall seen at the horizon of every image column.
//!
//! With a level camera each image column is a vertical plane through the
//! viewpoint, and the rows at the horizon see the wall at that bearing at eye
//! height, above floor-standing furniture and below the ceiling.
//! The resulting profile is cut at occlusion jumps and gaps, split into
//! straight pieces, and each piece is refitted with total least squares.
//! Neighbouring pieces meet at their line intersection. Pieces separated by a
//! jump are joined along the ray between the two columns, which the camera
//! never sees. The outermost pieces run out to rays just beyond the frame and
//! the polygon closes through the viewpoint.

use nalgebra::{Point2, Vector2};

use super::cloud::{median, MAD_TO_SIGMA};
use super::depth::{DepthMap, INVALID_DEPTH};
use super::polygon::{drop_collinear, Polygon2D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOptions {
    /// Smallest deviation in meters that splits a piece.
    pub split_tol_m: f64,
    /// Noise multiplier for the split tolerance.
    pub k_sigma: f64,
    /// Relative range change between neighbouring columns treated as an
    /// occlusion jump.
    pub max_jump: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            split_tol_m: 1e-3,
            k_sigma: 4.0,
            max_jump: 0.1,
        }
    }
}

/// Half height of the horizon band as a fraction of the image height.
pub const HORIZON_BAND: f64 = 0.025;

/// Plan point of every column at the horizon: the median depth over the rows
/// within [`HORIZON_BAND`] of the principal row. `None` where those rows hold
/// no valid pixel.
pub fn column_profile(depth: &DepthMap) -> Vec<Option<Point2<f64>>> {
    let k = depth.intrinsics();
    let (w, h) = (k.width as usize, k.height as usize);
    let half = (HORIZON_BAND * h as f64).max(0.5);
    let rows: Vec<usize> = (0..h).filter(|&v| (v as f64 - k.cy).abs() <= half).collect();
    let rows = if rows.is_empty() { vec![(k.cy.round() as usize).min(h - 1)] } else { rows };
    let data = depth.data();
    (0..w)
        .map(|u| {
            let mut zs: Vec<f64> = rows
                .iter()
                .map(|&v| data[v * w + u])
                .filter(|&d| d != INVALID_DEPTH)
                .map(f64::from)
                .collect();
            if zs.is_empty() {
                return None;
            }
            let z = median(&mut zs);
            Some(Point2::new((u as f64 - k.cx) / k.fx * z, z))
        })
        .collect()
}

/// A line through `origin` along unit `dir`.
#[derive(Debug, Clone, Copy)]
struct Line {
    origin: Point2<f64>,
    dir: Vector2<f64>,
}

impl Line {
    fn distance(&self, p: Point2<f64>) -> f64 {
        self.dir.perp(&(p - self.origin)).abs()
    }

    fn intersect(&self, other: &Line) -> Option<Point2<f64>> {
        let det = self.dir.perp(&other.dir);
        if det.abs() < 1e-9 {
            return None;
        }
        let t = (other.origin - self.origin).perp(&other.dir) / det;
        Some(self.origin + self.dir * t)
    }

    /// Where the line crosses the viewing ray of slope `s`, in front of the camera.
    fn on_ray(&self, s: f64) -> Option<Point2<f64>> {
        let ray = Line {
            origin: Point2::origin(),
            dir: Vector2::new(s, 1.0).normalize(),
        };
        self.intersect(&ray).filter(|p| p.y > 0.0)
    }
}

fn fit_line(pts: &[Point2<f64>], slope: f64) -> Line {
    match pts {
        [p] => Line {
            origin: *p,
            dir: Vector2::new(1.0, -slope).normalize(),
        },
        [a, b] => Line {
            origin: *a,
            dir: (b - a).normalize(),
        },
        _ => {
            let n = pts.len() as f64;
            let c = pts.iter().fold(Vector2::zeros(), |acc, p| acc + p.coords) / n;
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            for p in pts {
                let d = p.coords - c;
                sxx += d.x * d.x;
                sxy += d.x * d.y;
                syy += d.y * d.y;
            }
            let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
            Line {
                origin: Point2::from(c),
                dir: Vector2::new(theta.cos(), theta.sin()),
            }
        }
    }
}

/// Consecutive columns with data and no occlusion jump between them.
struct Run {
    first: usize,
    pts: Vec<Point2<f64>>,
}

fn runs(profile: &[Option<Point2<f64>>], max_jump: f64) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    let mut prev: Option<(usize, Point2<f64>)> = None;
    for (u, p) in profile.iter().enumerate() {
        let Some(p) = *p else {
            prev = None;
            continue;
        };
        let joined = prev.is_some_and(|(pu, q)| {
            let (a, b) = (q.coords.norm(), p.coords.norm());
            pu + 1 == u && a.max(b) <= (1.0 + max_jump) * a.min(b)
        });
        if joined {
            out.last_mut().expect("joined implies a run").pts.push(p);
        } else {
            out.push(Run { first: u, pts: vec![p] });
        }
        prev = Some((u, p));
    }
    out
}

/// Indices kept by Douglas-Peucker on an open polyline.
fn breakpoints(pts: &[Point2<f64>], tol: f64) -> Vec<usize> {
    let mut keep = vec![0, pts.len() - 1];
    let mut stack = vec![(0, pts.len() - 1)];
    while let Some((i, j)) = stack.pop() {
        if j <= i + 1 {
            continue;
        }
        let chord = Line {
            origin: pts[i],
            dir: (pts[j] - pts[i]).try_normalize(0.0).unwrap_or(Vector2::x()),
        };
        let (k, d) = (i + 1..j)
            .map(|k| (k, chord.distance(pts[k])))
            .fold((i, 0.0), |best, c| if c.1 > best.1 { c } else { best });
        if d > tol {
            keep.push(k);
            stack.push((i, k));
            stack.push((k, j));
        }
    }
    keep.sort_unstable();
    keep.dedup();
    keep
}

/// Robust scale of the profile: deviation of each point from its neighbours' chord.
fn noise_sigma(runs: &[Run]) -> f64 {
    let mut dev: Vec<f64> = runs
        .iter()
        .flat_map(|r| {
            r.pts.windows(3).filter_map(|w| {
                let d = (w[2] - w[0]).try_normalize(0.0)?;
                Some(d.perp(&(w[1] - w[0])).abs())
            })
        })
        .collect();
    if dev.is_empty() {
        0.0
    } else {
        MAD_TO_SIGMA * median(&mut dev)
    }
}

/// Pieces of one run as inclusive index ranges, after merging neighbours that
/// fit a single line within `tol`.
fn pieces(pts: &[Point2<f64>], tol: f64, slope: &dyn Fn(usize) -> f64) -> Vec<(usize, usize)> {
    let bp = breakpoints(pts, tol);
    let mut out: Vec<(usize, usize)> = if bp.len() == 1 {
        vec![(0, 0)]
    } else {
        bp.windows(2).map(|w| (w[0], w[1])).collect()
    };
    loop {
        let merge = out.windows(2).position(|w| {
            let span = &pts[w[0].0..=w[1].1];
            let line = fit_line(span, slope(w[0].0));
            span.iter().all(|p| line.distance(*p) <= tol)
        });
        match merge {
            Some(i) => {
                out[i].1 = out[i + 1].1;
                out.remove(i + 1);
            }
            None => return out,
        }
    }
}

/// Support of a piece for line fitting: its interior once it is long enough
/// that the shared corner samples can be left out.
fn support(pts: &[Point2<f64>], (a, b): (usize, usize)) -> &[Point2<f64>] {
    if b >= a + 3 {
        &pts[a + 1..b]
    } else {
        &pts[a..=b]
    }
}

/// Walls seen from the origin as a counter-clockwise polygon with the
/// viewpoint as its last vertex.
pub fn profile_footprint(depth: &DepthMap, opts: &ProfileOptions) -> Result<Polygon2D> {
    if !(opts.split_tol_m > 0.0 && opts.k_sigma >= 0.0 && opts.max_jump > 0.0) {
        return Err(Error::invalid("split_tol_m and max_jump must be positive, k_sigma non-negative"));
    }
    let k = *depth.intrinsics();
    let slope_at = |u: f64| (u - k.cx) / k.fx;
    let profile = column_profile(depth);
    let runs = runs(&profile, opts.max_jump);
    if runs.is_empty() {
        return Err(Error::degenerate("no valid pixels"));
    }
    let tol = opts.split_tol_m.max(opts.k_sigma * noise_sigma(&runs));
    let last_col = k.width as usize - 1;

    let mut verts: Vec<Point2<f64>> = Vec::new();
    for run in &runs {
        let pts = &run.pts;
        let slope = |i: usize| slope_at((run.first + i) as f64);
        let ps = pieces(pts, tol, &slope);
        let lines: Vec<Line> = ps.iter().map(|&(a, b)| fit_line(support(pts, (a, b)), slope(a))).collect();
        let end = run.first + pts.len() - 1;
        // outer ends get a full pixel of margin, inner ends stop between columns
        let start_ray = if run.first == 0 { -1.0 } else { run.first as f64 - 0.5 };
        let end_ray = if end == last_col { end as f64 + 1.0 } else { end as f64 + 0.5 };
        verts.push(lines[0].on_ray(slope_at(start_ray)).unwrap_or(pts[0]));
        for (i, pair) in lines.windows(2).enumerate() {
            let shared = pts[ps[i].1];
            let corner = pair[0]
                .intersect(&pair[1])
                .filter(|c| (c - shared).norm() <= 4.0 * tol + (pts[ps[i].1.saturating_sub(1)] - shared).norm());
            verts.push(corner.unwrap_or(shared));
        }
        let last = *lines.last().expect("at least one piece");
        verts.push(last.on_ray(slope_at(end_ray)).unwrap_or(pts[pts.len() - 1]));
    }
    // left to right around the origin is clockwise in the plan
    verts.reverse();
    verts.push(Point2::origin());
    let verts = drop_collinear(&verts, 1e-9);
    if verts.len() < 3 {
        return Err(Error::degenerate("visible walls collapse to a line"));
    }
    Polygon2D::new(verts)
}
