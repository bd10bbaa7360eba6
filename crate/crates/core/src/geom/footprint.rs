//! Plan-view footprint extraction.
//!
//! Points are projected orthographically onto the `(x, z)` plane and
//! rasterized into an occupancy grid. The grid is closed (radius one cell),
//! its largest 4-connected component is kept, the outer contour is traced
//! along cell edges and simplified with Douglas-Peucker. Each simplified edge
//! is then refitted to the points that support it: a robust total-least-squares
//! line gives the direction and the outermost inlier gives the offset, so a
//! densely sampled planar wall comes back at its true position rather than at
//! a cell boundary.
//!
//! When a viewpoint is supplied the free space between the viewpoint and every
//! observed point is marked occupied too, which makes the footprint enclose the
//! camera. The two edges meeting at the viewpoint then follow the angular
//! extremes of the cloud; those planes contain the camera centre and are never
//! seen when rendered from it.

use std::collections::HashMap;

use nalgebra::{Point2, Vector2};

use super::cloud::{median, PointCloud, MAD_TO_SIGMA};
use super::polygon::{douglas_peucker_closed, drop_collinear, is_simple, signed_area, Polygon2D};
use crate::error::{Error, Result};

const MAX_GRID_CELLS: usize = 64_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FootprintOptions {
    /// Occupancy grid resolution in meters.
    pub cell_m: f64,
    /// Douglas-Peucker tolerance, in cells.
    pub simplify_eps_cells: f64,
    /// Plan position of the camera, if the cloud was observed from one.
    pub viewpoint: Option<Point2<f64>>,
    /// Refit simplified edges to the supporting points.
    pub refine_edges: bool,
}

impl Default for FootprintOptions {
    fn default() -> Self {
        Self {
            cell_m: 0.05,
            simplify_eps_cells: 3.0,
            viewpoint: None,
            refine_edges: true,
        }
    }
}

/// Footprint polygon of a cloud with default refinement and no viewpoint.
pub fn extract_footprint_polygon(cloud: &PointCloud, cell_m: f64, simplify_eps_cells: f64) -> Result<Polygon2D> {
    extract_footprint(
        cloud,
        &FootprintOptions {
            cell_m,
            simplify_eps_cells,
            ..FootprintOptions::default()
        },
    )
}

struct Grid {
    origin: Point2<f64>,
    cell: f64,
    nx: usize,
    nz: usize,
    occ: Vec<bool>,
}

impl Grid {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nz + j
    }

    fn cell_of(&self, p: Point2<f64>) -> (usize, usize) {
        let i = ((p.x - self.origin.x) / self.cell).floor() as usize;
        let j = ((p.y - self.origin.y) / self.cell).floor() as usize;
        (i.min(self.nx - 1), j.min(self.nz - 1))
    }

    fn get(&self, i: isize, j: isize) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.nx && (j as usize) < self.nz && self.occ[self.idx(i as usize, j as usize)]
    }

    fn morph(&self, dilate: bool) -> Vec<bool> {
        let mut out = vec![false; self.occ.len()];
        for i in 0..self.nx {
            for j in 0..self.nz {
                let mut acc = !dilate;
                for di in -1..=1isize {
                    for dj in -1..=1isize {
                        let v = self.get(i as isize + di, j as isize + dj);
                        if dilate {
                            acc |= v;
                        } else {
                            acc &= v;
                        }
                    }
                }
                out[self.idx(i, j)] = acc;
            }
        }
        out
    }

    fn to_world(&self, i: i64, j: i64) -> Point2<f64> {
        Point2::new(
            self.origin.x + i as f64 * self.cell,
            self.origin.y + j as f64 * self.cell,
        )
    }
}

/// Largest 4-connected component; ties go to the component whose first cell in
/// (x, z) lexicographic scan order comes first.
/// Fills every 2x2 block occupied only along a diagonal, so no contour
/// vertex is shared by two boundary passes.
fn fill_pinches(grid: &mut Grid) {
    loop {
        let mut changed = false;
        for i in 0..grid.nx.saturating_sub(1) {
            for j in 0..grid.nz.saturating_sub(1) {
                let cells = [grid.idx(i, j), grid.idx(i + 1, j + 1), grid.idx(i + 1, j), grid.idx(i, j + 1)];
                let [a, b, c, d] = cells.map(|k| grid.occ[k]);
                if (a && b && !c && !d) || (c && d && !a && !b) {
                    for k in cells {
                        grid.occ[k] = true;
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            return;
        }
    }
}

fn largest_component(grid: &Grid) -> Vec<bool> {
    let mut label = vec![usize::MAX; grid.occ.len()];
    let mut best: (usize, usize) = (usize::MAX, 0);
    let mut next = 0;
    let mut stack = Vec::new();
    for i in 0..grid.nx {
        for j in 0..grid.nz {
            let s = grid.idx(i, j);
            if !grid.occ[s] || label[s] != usize::MAX {
                continue;
            }
            let mut size = 0;
            label[s] = next;
            stack.push((i, j));
            while let Some((a, b)) = stack.pop() {
                size += 1;
                for (da, db) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                    let (na, nb) = (a as isize + da, b as isize + db);
                    if grid.get(na, nb) {
                        let k = grid.idx(na as usize, nb as usize);
                        if label[k] == usize::MAX {
                            label[k] = next;
                            stack.push((na as usize, nb as usize));
                        }
                    }
                }
            }
            if size > best.1 {
                best = (next, size);
            }
            next += 1;
        }
    }
    label.iter().map(|&l| l == best.0).collect()
}

/// Outer boundary of a component, traced along cell edges with the interior
/// on the left. At pinch vertices the left turn is taken, which matches
/// 4-connectivity and keeps every loop simple.
fn trace_outer_contour(grid: &Grid, comp: &[bool]) -> Vec<(i64, i64)> {
    let inside = |i: i64, j: i64| {
        i >= 0 && j >= 0 && (i as usize) < grid.nx && (j as usize) < grid.nz && comp[grid.idx(i as usize, j as usize)]
    };
    let mut out: HashMap<(i64, i64), Vec<(i64, i64)>> = HashMap::new();
    let mut starts = Vec::new();
    for i in 0..grid.nx as i64 {
        for j in 0..grid.nz as i64 {
            if !inside(i, j) {
                continue;
            }
            let mut push = |a: (i64, i64), b: (i64, i64)| {
                out.entry(a).or_default().push(b);
                starts.push(a);
            };
            if !inside(i, j - 1) {
                push((i, j), (i + 1, j));
            }
            if !inside(i + 1, j) {
                push((i + 1, j), (i + 1, j + 1));
            }
            if !inside(i, j + 1) {
                push((i + 1, j + 1), (i, j + 1));
            }
            if !inside(i - 1, j) {
                push((i, j + 1), (i, j));
            }
        }
    }

    let mut best: Vec<(i64, i64)> = Vec::new();
    let mut best_area = f64::NEG_INFINITY;
    for start in starts {
        let Some(first) = out.get_mut(&start).and_then(|v| v.pop()) else {
            continue;
        };
        let mut ring = vec![start];
        let mut prev = start;
        let mut cur = first;
        while cur != start {
            ring.push(cur);
            let dir_in = (cur.0 - prev.0, cur.1 - prev.1);
            let cands = out.get_mut(&cur).expect("boundary edges form closed loops");
            let pick = if cands.len() > 1 {
                cands
                    .iter()
                    .position(|n| dir_in.0 * (n.1 - cur.1) - dir_in.1 * (n.0 - cur.0) > 0)
                    .unwrap_or(0)
            } else {
                0
            };
            let next = cands.swap_remove(pick);
            prev = cur;
            cur = next;
        }
        let pts: Vec<_> = ring.iter().map(|&(i, j)| Point2::new(i as f64, j as f64)).collect();
        let area = signed_area(&pts);
        if area > best_area {
            best_area = area;
            best = ring;
        }
    }
    best
}

fn mark_segment(grid: &mut Grid, a: Point2<f64>, b: Point2<f64>) {
    let len = (b - a).norm();
    let steps = (2.0 * len / grid.cell).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let p = a + (b - a) * (s as f64 / steps as f64);
        let (i, j) = grid.cell_of(p);
        let k = grid.idx(i, j);
        grid.occ[k] = true;
    }
}

/// Angular gap above which neighbouring sight lines are not bridged.
const MAX_WEDGE_GAP_RAD: f64 = 3.0 * std::f64::consts::PI / 180.0;

/// Marks the star-shaped region seen from `vp`: per angular bin the farthest
/// target is kept and consecutive bins are joined by filled triangles, so
/// diverging sight lines to distant walls leave no gaps.
fn mark_wedge(grid: &mut Grid, vp: Point2<f64>, targets: &[Point2<f64>]) {
    let fwd = targets.iter().fold(Vector2::zeros(), |acc, p| {
        let d = p - vp;
        if d.norm() > 0.0 {
            acc + d.normalize()
        } else {
            acc
        }
    });
    if fwd.norm() < 1e-9 {
        return;
    }
    let fwd = fwd.normalize();
    let reach = targets.iter().map(|p| (p - vp).norm()).fold(0.0, f64::max);
    if reach <= grid.cell {
        return;
    }
    let step = 0.5 * grid.cell / reach;
    let mut bins: std::collections::BTreeMap<i64, (f64, Point2<f64>)> = std::collections::BTreeMap::new();
    for p in targets {
        let d = p - vp;
        let r = d.norm();
        if r == 0.0 {
            continue;
        }
        let ang = fwd.perp(&d).atan2(fwd.dot(&d));
        let slot = bins.entry((ang / step).floor() as i64).or_insert((r, *p));
        if r > slot.0 {
            *slot = (r, *p);
        }
    }
    let far: Vec<(i64, Point2<f64>)> = bins.into_iter().map(|(k, (_, p))| (k, p)).collect();
    for w in far.windows(2) {
        if (w[1].0 - w[0].0) as f64 * step <= MAX_WEDGE_GAP_RAD {
            fill_triangle(grid, vp, w[0].1, w[1].1);
        }
    }
}

/// Marks every cell whose centre lies in the closed triangle.
fn fill_triangle(grid: &mut Grid, a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) {
    let area2 = (b - a).perp(&(c - a));
    if area2.abs() < 1e-12 {
        return;
    }
    let (i0, j0) = grid.cell_of(a.inf(&b).inf(&c));
    let (i1, j1) = grid.cell_of(a.sup(&b).sup(&c));
    let tol = -1e-9 * area2.abs();
    for i in i0..=i1 {
        for j in j0..=j1 {
            let p = grid.to_world(i as i64, j as i64) + Vector2::repeat(0.5 * grid.cell);
            let w0 = (b - p).perp(&(c - p)) * area2.signum();
            let w1 = (c - p).perp(&(a - p)) * area2.signum();
            let w2 = (a - p).perp(&(b - p)) * area2.signum();
            if w0 >= tol && w1 >= tol && w2 >= tol {
                let k = grid.idx(i, j);
                grid.occ[k] = true;
            }
        }
    }
}

fn outer_ring(grid: &Grid) -> Vec<Point2<f64>> {
    let comp = largest_component(grid);
    trace_outer_contour(grid, &comp)
        .iter()
        .map(|&(i, j)| grid.to_world(i, j))
        .collect()
}

/// Simplifies with a shrinking tolerance until the result is a simple polygon
/// that strands no more of `plan` beyond `reach` than `ring` does.
fn simplify_simple(ring: &[Point2<f64>], eps: f64, plan: &[Point2<f64>], reach: f64) -> Vec<Point2<f64>> {
    let limit = Polygon2D::new(ring.to_vec()).ok().map(|p| strays(&p, plan, reach));
    let mut eps = eps;
    loop {
        let s = douglas_peucker_closed(ring, eps);
        if s.len() >= 3 && is_simple(&s) && signed_area(&s) > 0.0 {
            let covered = match limit {
                Some(limit) => Polygon2D::new(s.clone()).is_ok_and(|p| strays(&p, plan, reach) <= limit),
                None => true,
            };
            if covered {
                return s;
            }
        }
        if eps < 1e-9 {
            return ring.to_vec();
        }
        eps *= 0.5;
    }
}

/// A plan line `n · p = offset` with unit normal pointing out of the polygon.
#[derive(Debug, Clone, Copy)]
struct Line {
    normal: Vector2<f64>,
    offset: f64,
}

impl Line {
    fn through(a: Point2<f64>, b: Point2<f64>) -> Self {
        let d = (b - a).normalize();
        // CCW ring: interior on the left, so the outward normal is on the right.
        let normal = Vector2::new(d.y, -d.x);
        Self {
            normal,
            offset: normal.dot(&a.coords),
        }
    }

    fn residual(&self, p: Point2<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    fn intersect(&self, other: &Line) -> Option<Point2<f64>> {
        let det = self.normal.perp(&other.normal);
        if det.abs() < (5f64).to_radians().sin() {
            return None;
        }
        let x = (self.offset * other.normal.y - other.offset * self.normal.y) / det;
        let y = (self.normal.x * other.offset - other.normal.x * self.offset) / det;
        Some(Point2::new(x, y))
    }
}

/// Robust direction + outermost-inlier offset for the edge `a -> b`.
fn refit_edge(a: Point2<f64>, b: Point2<f64>, pts: &[Point2<f64>], band: f64) -> Option<Line> {
    let init = Line::through(a, b);
    let dir = (b - a).normalize();
    let len = (b - a).norm();
    let (t0, t1) = if len > 4.0 * band { (0.1, 0.9) } else { (0.0, 1.0) };
    let mut cand: Vec<Point2<f64>> = pts
        .iter()
        .filter(|p| {
            let t = (*p - a).dot(&dir) / len;
            t >= t0 && t <= t1 && init.residual(**p).abs() <= band
        })
        .copied()
        .collect();
    if cand.len() < 2 {
        return None;
    }
    let mut line = init;
    for _ in 0..6 {
        let n = cand.len() as f64;
        let c = cand.iter().fold(Vector2::zeros(), |acc, p| acc + p.coords) / n;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in &cand {
            let d = p.coords - c;
            sxx += d.x * d.x;
            sxy += d.x * d.y;
            syy += d.y * d.y;
        }
        // principal axis of the 2x2 scatter
        let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let mut d = Vector2::new(theta.cos(), theta.sin());
        if d.dot(&dir) < 0.0 {
            d = -d;
        }
        if d.dot(&dir) < (30f64).to_radians().cos() {
            return None;
        }
        let normal = Vector2::new(d.y, -d.x);
        line = Line {
            normal,
            offset: normal.dot(&c),
        };
        let mut res: Vec<f64> = cand.iter().map(|p| line.residual(*p)).collect();
        let mut abs: Vec<f64> = res.iter().map(|r| r.abs()).collect();
        let thresh = (3.0 * MAD_TO_SIGMA * median(&mut abs)).max(2e-4);
        let before = cand.len();
        let kept: Vec<_> = cand
            .iter()
            .zip(res.iter_mut())
            .filter(|(_, r)| r.abs() <= thresh)
            .map(|(p, _)| *p)
            .collect();
        if kept.len() < 2 {
            break;
        }
        cand = kept;
        if cand.len() == before {
            break;
        }
    }
    let outer = cand.iter().map(|p| line.residual(*p)).fold(f64::NEG_INFINITY, f64::max);
    line.offset += outer;
    Some(line)
}

fn ray_line(origin: Point2<f64>, dir: Vector2<f64>, outward_left: bool) -> Line {
    let normal = if outward_left {
        Vector2::new(-dir.y, dir.x)
    } else {
        Vector2::new(dir.y, -dir.x)
    };
    Line {
        normal,
        offset: normal.dot(&origin.coords),
    }
}

fn rotate(v: Vector2<f64>, ang: f64) -> Vector2<f64> {
    let (s, c) = ang.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Replaces the ring vertices around the viewpoint by the viewpoint itself.
fn snap_viewpoint(ring: &mut Vec<Point2<f64>>, vp: Point2<f64>, radius: f64) -> Option<usize> {
    let n = ring.len();
    let nearest = (0..n).min_by(|&i, &j| (ring[i] - vp).norm().total_cmp(&(ring[j] - vp).norm()))?;
    if (ring[nearest] - vp).norm() > radius {
        return None;
    }
    let mut run = vec![nearest];
    let mut k = nearest;
    loop {
        k = (k + 1) % n;
        if k == nearest || (ring[k] - vp).norm() > radius {
            break;
        }
        run.push(k);
    }
    k = nearest;
    loop {
        k = (k + n - 1) % n;
        if run.contains(&k) || (ring[k] - vp).norm() > radius {
            break;
        }
        run.push(k);
    }
    if n - run.len() < 2 {
        return None;
    }
    let mut rotated: Vec<Point2<f64>> = Vec::with_capacity(n);
    // start right after the run so the viewpoint goes last
    let last_in_run = {
        let mut k = nearest;
        while run.contains(&((k + 1) % n)) && (k + 1) % n != nearest {
            k = (k + 1) % n;
        }
        k
    };
    let mut k = (last_in_run + 1) % n;
    while !run.contains(&k) {
        rotated.push(ring[k]);
        k = (k + 1) % n;
    }
    rotated.push(vp);
    *ring = rotated;
    Some(ring.len() - 1)
}

pub fn extract_footprint(cloud: &PointCloud, opts: &FootprintOptions) -> Result<Polygon2D> {
    if !(opts.cell_m > 0.0) || !(opts.simplify_eps_cells >= 0.0) {
        return Err(Error::invalid("cell_m must be positive and simplify_eps_cells non-negative"));
    }
    if cloud.is_empty() {
        return Err(Error::degenerate("empty point cloud"));
    }
    let plan: Vec<Point2<f64>> = cloud.points.iter().map(|p| Point2::new(p.x, p.z)).collect();
    let cell = opts.cell_m;
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in plan.iter().chain(opts.viewpoint.iter()) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let margin = 3.0 * cell;
    let origin = Point2::new(lo.x - margin, lo.y - margin);
    let nx = ((hi.x - origin.x + margin) / cell).ceil() as usize + 1;
    let nz = ((hi.y - origin.y + margin) / cell).ceil() as usize + 1;
    if nx.saturating_mul(nz) > MAX_GRID_CELLS {
        return Err(Error::invalid(format!(
            "footprint grid of {nx}x{nz} cells is too large; increase cell_m"
        )));
    }
    let mut grid = Grid {
        origin,
        cell,
        nx,
        nz,
        occ: vec![false; nx * nz],
    };
    let mut distinct = 0;
    for p in &plan {
        let (i, j) = grid.cell_of(*p);
        let k = grid.idx(i, j);
        if !grid.occ[k] {
            grid.occ[k] = true;
            distinct += 1;
        }
    }
    if distinct < 3 {
        return Err(Error::degenerate(format!(
            "cloud projects onto {distinct} grid cell(s); at least 3 are required"
        )));
    }
    if let Some(vp) = opts.viewpoint {
        let centres: Vec<Point2<f64>> = (0..grid.occ.len())
            .filter(|&k| grid.occ[k])
            .map(|k| grid.to_world((k / nz) as i64, (k % nz) as i64) + Vector2::repeat(0.5 * cell))
            .collect();
        for c in &centres {
            mark_segment(&mut grid, vp, *c);
        }
        mark_wedge(&mut grid, vp, &centres);
    }

    grid.occ = grid.morph(true);
    grid.occ = grid.morph(false);
    fill_pinches(&mut grid);
    let mut ring = outer_ring(&grid);
    if opts.viewpoint.is_some() && !is_simple(&ring) {
        // the seen region is solid, so pinching one-cell spurs can be opened away
        let eroded = grid.morph(false);
        let closed = std::mem::replace(&mut grid.occ, eroded);
        grid.occ = grid.morph(true);
        fill_pinches(&mut grid);
        if grid.occ.iter().filter(|&&o| o).count() >= 3 {
            ring = outer_ring(&grid);
        } else {
            grid.occ = closed;
        }
    }
    let ring = drop_collinear(&ring, 1e-9 * cell);
    let eps = opts.simplify_eps_cells * cell;
    let mut simplified = simplify_simple(&ring, eps, &plan, 2.0 * cell);

    let apex = match opts.viewpoint {
        Some(vp) => snap_viewpoint(&mut simplified, vp, eps + 3.0 * cell),
        None => None,
    };
    if apex.is_some() && !(simplified.len() >= 3 && is_simple(&simplified) && signed_area(&simplified) > 0.0) {
        return Err(Error::degenerate("footprint collapses when anchored at the viewpoint"));
    }

    let simplified = Polygon2D::new(simplified)?;
    if opts.refine_edges {
        let refined = refine_polygon(simplified.vertices(), &plan, cloud, apex, opts.viewpoint, eps + 2.0 * cell, cell)
            .and_then(|r| Polygon2D::new(r).ok());
        if let Some(refined) = refined {
            // a refit may not strand points that the grid polygon covered
            let reach = 2.0 * cell;
            if strays(&refined, &plan, reach) <= strays(&simplified, &plan, reach) {
                return Ok(refined);
            }
        }
    }
    Ok(simplified)
}

/// Number of points farther than `reach` outside `poly`.
fn strays(poly: &Polygon2D, plan: &[Point2<f64>], reach: f64) -> usize {
    plan.iter().filter(|p| poly.outside_distance(**p) > reach).count()
}

fn refine_polygon(
    ring: &[Point2<f64>],
    plan: &[Point2<f64>],
    cloud: &PointCloud,
    apex: Option<usize>,
    viewpoint: Option<Point2<f64>>,
    band: f64,
    cell: f64,
) -> Option<Vec<Point2<f64>>> {
    let n = ring.len();
    // Points well away from the lowest and highest surfaces carry the wall evidence.
    let mut ys: Vec<f64> = cloud.points.iter().map(|p| p.y).collect();
    ys.sort_by(f64::total_cmp);
    let pick = |q: f64| ys[((ys.len() - 1) as f64 * q).round() as usize];
    let (ylo, yhi) = (pick(0.01), pick(0.99));
    let span = yhi - ylo;
    let walls: Vec<Point2<f64>> = if span > 0.0 {
        cloud
            .points
            .iter()
            .zip(plan)
            .filter(|(p, _)| p.y > ylo + 0.05 * span && p.y < yhi - 0.05 * span)
            .map(|(_, q)| *q)
            .collect()
    } else {
        Vec::new()
    };

    let mut lines: Vec<Line> = (0..n).map(|i| Line::through(ring[i], ring[(i + 1) % n])).collect();
    let mut fixed = vec![false; n];
    if let (Some(a), Some(vp)) = (apex, viewpoint) {
        // edge a -> a+1 leaves the viewpoint, edge a-1 -> a arrives at it
        let fwd = plan
            .iter()
            .fold(Vector2::zeros(), |acc, p| acc + (p - vp).normalize())
            .normalize();
        let mut min_ang = f64::INFINITY;
        let mut max_ang = f64::NEG_INFINITY;
        let mut reach: f64 = 0.0;
        for p in plan {
            let d = p - vp;
            let ang = fwd.perp(&d).atan2(fwd.dot(&d));
            min_ang = min_ang.min(ang);
            max_ang = max_ang.max(ang);
            reach = reach.max(d.norm());
        }
        let pad = (cell / reach.max(cell)).min(0.05);
        let leave = rotate(fwd, min_ang - pad);
        let arrive = rotate(fwd, max_ang + pad);
        lines[a] = ray_line(vp, leave, false);
        lines[(a + n - 1) % n] = ray_line(vp, arrive, true);
        fixed[a] = true;
        fixed[(a + n - 1) % n] = true;
    }
    let wall_fit = |a: Point2<f64>, b: Point2<f64>| refit_edge(a, b, &walls, band).or_else(|| refit_edge(a, b, plan, band));
    for i in 0..n {
        if fixed[i] {
            continue;
        }
        if let Some(l) = wall_fit(ring[i], ring[(i + 1) % n]) {
            lines[i] = l;
        }
    }
    let evidence = if walls.is_empty() { plan } else { &walls[..] };
    let tol = SPLIT_TOL_CELLS * cell;
    let mut st = Refit {
        out: corners(ring, &lines, apex, viewpoint, band + 2.0 * cell)?,
        ring: ring.to_vec(),
        lines,
        fixed,
        apex,
    };
    for _ in 0..MAX_SPLITS {
        while st.merge_short(band, viewpoint, evidence, tol, 2.0 * band + 2.0 * cell) {}
        let Some((e, p)) = worst_point(&st.out, &st.lines, &st.fixed, evidence, band, tol) else {
            break;
        };
        let m = st.ring.len();
        let (a, b) = (st.out[e], st.out[(e + 1) % m]);
        let (Some(first), Some(second)) = (wall_fit(a, p), wall_fit(p, b)) else {
            break;
        };
        let mut next = st.clone();
        next.ring = st.out.clone();
        next.ring.insert(e + 1, p);
        next.lines[e] = first;
        next.lines.insert(e + 1, second);
        next.fixed.insert(e + 1, false);
        next.apex = st.apex.map(|k| if k > e { k + 1 } else { k });
        match corners(&next.ring, &next.lines, next.apex, viewpoint, band + 2.0 * cell) {
            Some(out) => {
                next.out = out;
                st = next;
            }
            None => break,
        }
    }
    let out = st.out;
    (is_simple(&out) && signed_area(&out) > 0.0).then_some(out)
}

/// Edge lines being refined, with their current corners.
#[derive(Clone)]
struct Refit {
    ring: Vec<Point2<f64>>,
    lines: Vec<Line>,
    fixed: Vec<bool>,
    apex: Option<usize>,
    out: Vec<Point2<f64>>,
}

impl Refit {
    /// Merges the shortest free edge below `band` whose merged corner still
    /// explains the evidence; these are contour artefacts near corners and
    /// at the field-of-view boundary.
    fn merge_short(&mut self, band: f64, viewpoint: Option<Point2<f64>>, evidence: &[Point2<f64>], tol: f64, max_shift: f64) -> bool {
        let m = self.ring.len();
        if m < 4 {
            return false;
        }
        let mut cand: Vec<(f64, usize)> = (0..m - 1)
            .filter(|&e| !self.fixed[e] && Some(e + 1) != self.apex)
            .map(|e| ((self.out[e + 1] - self.out[e]).norm(), e))
            .filter(|&(len, _)| len < band)
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, e) in cand {
            let mut next = self.clone();
            next.ring.remove(e + 1);
            next.lines.remove(e);
            next.fixed.remove(e);
            next.apex = self.apex.map(|k| if k > e { k - 1 } else { k });
            let Some(out) = corners(&next.ring, &next.lines, next.apex, viewpoint, max_shift) else {
                continue;
            };
            let m2 = next.ring.len();
            let touched = [(e + m2 - 1) % m2, e % m2];
            let worst_touched = |poly: &[Point2<f64>], lines: &[Line], fixed: &[bool]| {
                worst_point(poly, lines, fixed, evidence, band, tol).filter(|(w, _)| touched.contains(w))
            };
            // the merge may not create a violation on the edges it joins
            let violates = worst_touched(&out, &next.lines, &next.fixed).is_some_and(|(w, p)| {
                let before = [e.saturating_sub(1), e, e + 1].map(|k| self.lines[k % m].residual(p).abs());
                next.lines[w].residual(p).abs() > tol.max(before.into_iter().fold(f64::INFINITY, f64::min))
            });
            if is_simple(&out) && !violates {
                next.out = out;
                *self = next;
                return true;
            }
        }
        false
    }
}

/// Refined edges are split at most this many times.
const MAX_SPLITS: usize = 16;
/// Evidence beyond this many robust sigmas of its edge's residuals splits the edge.
const SPLIT_K_SIGMA: f64 = 4.0;
/// Split tolerance floor, in cells.
const SPLIT_TOL_CELLS: f64 = 0.02;

/// Intersects consecutive edge lines; `None` if a corner moves too far.
fn corners(
    ring: &[Point2<f64>],
    lines: &[Line],
    apex: Option<usize>,
    viewpoint: Option<Point2<f64>>,
    max_shift: f64,
) -> Option<Vec<Point2<f64>>> {
    let n = ring.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if Some(i) == apex {
            out.push(viewpoint.expect("apex implies viewpoint"));
            continue;
        }
        let prev = &lines[(i + n - 1) % n];
        let next = &lines[i];
        let v = prev.intersect(next).unwrap_or_else(|| {
            // nearly parallel neighbours: project the vertex onto both lines
            let p = ring[i];
            let a = p - prev.normal * prev.residual(p);
            let b = p - next.normal * next.residual(p);
            Point2::from((a.coords + b.coords) * 0.5)
        });
        if (v - ring[i]).norm() > max_shift {
            return None;
        }
        out.push(v);
    }
    Some(out)
}

/// The point furthest from the free edge it projects onto, if further than
/// both `tol` and the edge's own residual noise allows.
fn worst_point(
    poly: &[Point2<f64>],
    lines: &[Line],
    fixed: &[bool],
    pts: &[Point2<f64>],
    band: f64,
    tol: f64,
) -> Option<(usize, Point2<f64>)> {
    let n = poly.len();
    let mut per_edge: Vec<Vec<(f64, Point2<f64>)>> = vec![Vec::new(); n];
    for p in pts {
        let mut nearest: Option<(f64, usize)> = None;
        // rays from the viewpoint are never observed, so they take no evidence
        for e in (0..n).filter(|&e| !fixed[e]) {
            let (a, b) = (poly[e], poly[(e + 1) % n]);
            let ab = b - a;
            let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            let d = (a + ab * t - p).norm();
            if nearest.is_none_or(|(bd, _)| d < bd) {
                nearest = Some((d, e));
            }
        }
        let Some((_, e)) = nearest else { continue };
        let (a, b) = (poly[e], poly[(e + 1) % n]);
        let ab = b - a;
        let t = (p - a).dot(&ab) / ab.norm_squared();
        let r = lines[e].residual(*p).abs();
        if t > 0.0 && t < 1.0 && r <= band {
            per_edge[e].push((r, *p));
        }
    }
    let mut best: Option<(f64, usize, Point2<f64>)> = None;
    for (e, res) in per_edge.iter().enumerate() {
        let Some(&(r, p)) = res.iter().max_by(|a, b| a.0.total_cmp(&b.0)) else {
            continue;
        };
        let mut abs: Vec<f64> = res.iter().map(|(r, _)| *r).collect();
        let limit = tol.max(SPLIT_K_SIGMA * MAD_TO_SIGMA * median(&mut abs));
        if r > limit && best.is_none_or(|(br, _, _)| r > br) {
            best = Some((r, e, p));
        }
    }
    best.map(|(_, e, p)| (e, p))
}
