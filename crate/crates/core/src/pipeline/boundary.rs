use nalgebra::Point2;

use crate::error::{Error, Result};
use crate::geom::{backproject_depth, depth_to_mesh, extract_footprint, profile_footprint, DepthMap, FootprintOptions, Polygon2D, ProfileOptions};
use crate::io::{SceneCamera, SceneSpec};
use crate::raster::render_depth;

/// How the plan footprint is recovered from the depth map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FootprintMethod {
    /// Farthest point of every image column, split into straight walls.
    #[default]
    Profile,
    /// Occupancy grid, contour trace and Douglas-Peucker over the whole cloud.
    Grid,
}

impl FootprintMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FootprintMethod::Profile => "profile",
            FootprintMethod::Grid => "grid",
        }
    }
}

impl std::str::FromStr for FootprintMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "profile" => Ok(FootprintMethod::Profile),
            "grid" => Ok(FootprintMethod::Grid),
            other => Err(Error::invalid(format!("unknown footprint method '{other}' (expected profile or grid)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryOptions {
    pub method: FootprintMethod,
    pub cell_m: f64,
    pub simplify_eps_cells: f64,
    pub include_floor: bool,
    pub include_ceiling: bool,
    /// Percentiles of point heights used as the wall extent.
    pub y_percentiles: (f64, f64),
    /// Background depth; `None` means twice the largest input depth.
    pub far_m: Option<f64>,
    pub max_edge_jump: f64,
    /// Refit simplified grid edges to the supporting points.
    pub refine_edges: bool,
    /// Smallest wall bend in meters the profile method resolves.
    pub split_tol_m: f64,
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        Self {
            method: FootprintMethod::Profile,
            cell_m: 0.05,
            simplify_eps_cells: 3.0,
            include_floor: true,
            include_ceiling: false,
            y_percentiles: (1.0, 99.0),
            far_m: None,
            max_edge_jump: 0.1,
            refine_edges: true,
            split_tol_m: 1e-3,
        }
    }
}

impl BoundaryOptions {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.y_percentiles;
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return Err(Error::invalid(format!("y_percentiles must satisfy 0 <= low < high <= 100, got ({lo}, {hi})")));
        }
        if !(self.cell_m > 0.0 && self.max_edge_jump > 0.0 && self.split_tol_m > 0.0 && self.simplify_eps_cells >= 0.0) {
            return Err(Error::invalid("cell_m, max_edge_jump and split_tol_m must be positive, simplify_eps_cells non-negative"));
        }
        if let Some(f) = self.far_m {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::invalid(format!("far_m must be positive, got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryResult {
    pub condition: DepthMap,
    pub scene: SceneSpec,
}

/// Linear-interpolated percentile of sorted values.
pub(crate) fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * pct / 100.0;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Standard deviation of the plan (x, z) positions along their minor axis.
fn plan_minor_spread(points: &[nalgebra::Point3<f64>]) -> f64 {
    let n = points.len() as f64;
    let (mx, mz) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x / n, b + p.z / n));
    let (mut sxx, mut sxz, mut szz) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dz) = (p.x - mx, p.z - mz);
        sxx += dx * dx / n;
        sxz += dx * dz / n;
        szz += dz * dz / n;
    }
    let half_trace = 0.5 * (sxx + szz);
    let disc = (0.25 * (sxx - szz).powi(2) + sxz * sxz).sqrt();
    (half_trace - disc).max(0.0).sqrt()
}

/// Boundary condition of an observed depth map: the walls of the plan-view
/// footprint (plus floor and optionally ceiling) rendered from the same camera.
pub fn boundary_proxy(depth: &DepthMap, opts: &BoundaryOptions) -> Result<BoundaryResult> {
    opts.validate()?;
    let cloud = backproject_depth(depth);
    if cloud.len() < 3 {
        return Err(Error::degenerate(format!("{} valid pixels; at least 3 are required", cloud.len())));
    }
    let spread = plan_minor_spread(&cloud.points);
    if spread < 0.5 * opts.cell_m {
        return Err(Error::degenerate(format!(
            "plan projection is collinear (minor-axis spread {spread:.3e} m)"
        )));
    }
    let grid = || {
        extract_footprint(
            &cloud,
            &FootprintOptions {
                cell_m: opts.cell_m,
                simplify_eps_cells: opts.simplify_eps_cells,
                viewpoint: Some(Point2::origin()),
                refine_edges: opts.refine_edges,
            },
        )
    };
    let footprint = match opts.method {
        FootprintMethod::Grid => grid()?,
        FootprintMethod::Profile => {
            let profile = ProfileOptions {
                split_tol_m: opts.split_tol_m,
                max_jump: opts.max_edge_jump,
                ..ProfileOptions::default()
            };
            match profile_footprint(depth, &profile) {
                Ok(fp) => fp,
                Err(Error::Degenerate(msg)) => {
                    log::debug!("column profile failed ({msg}); using the occupancy grid");
                    grid()?
                }
                Err(e) => return Err(e),
            }
        }
    };

    // Heights come from points that survive discontinuity culling, so isolated
    // flying pixels do not stretch the walls.
    let mesh = depth_to_mesh(depth, opts.max_edge_jump)?;
    let mut used = vec![false; mesh.vertices.len()];
    for t in &mesh.triangles {
        for &i in t {
            used[i as usize] = true;
        }
    }
    let mut ys: Vec<f64> = mesh.vertices.iter().zip(&used).filter(|(_, u)| **u).map(|(p, _)| p.y).collect();
    if ys.is_empty() {
        ys = cloud.points.iter().map(|p| p.y).collect();
    }
    ys.sort_by(f64::total_cmp);
    let y_min = percentile_sorted(&ys, opts.y_percentiles.0);
    let y_max = percentile_sorted(&ys, opts.y_percentiles.1);
    if !(y_max > y_min) {
        return Err(Error::degenerate("observed heights span zero range"));
    }

    let max_depth = depth.max_depth().map(f64::from).unwrap_or(1.0);
    let far_m = opts.far_m.unwrap_or(2.0 * max_depth);
    let scene = scene_for(depth, footprint, y_min, y_max, opts, far_m);
    let condition = render_depth(&scene.render_scene()?, depth.intrinsics())?;
    Ok(BoundaryResult { condition, scene })
}

fn scene_for(depth: &DepthMap, footprint: Polygon2D, y_min: f64, y_max: f64, opts: &BoundaryOptions, far_m: f64) -> SceneSpec {
    let k = depth.intrinsics();
    SceneSpec {
        camera: SceneCamera {
            fov_deg: k.fov_deg(),
            width: k.width,
            height: k.height,
        },
        footprint,
        y_min,
        y_max,
        include_floor: opts.include_floor,
        include_ceiling: opts.include_ceiling,
        far_m,
        boxes: Vec::new(),
    }
}
