//! Versioned scene files.
//!
//! A scene is stored as pretty-printed JSON with sorted keys and every float
//! rounded to 9 significant digits, so saving a loaded canonical file
//! reproduces it byte for byte.

use std::path::Path;

use nalgebra::{Point2, Point3, Vector3};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result, ValidationIssue};
use crate::geom::{extrude_polygon_to_planes, DepthMap, polygon::polygon_problem, CameraIntrinsics, OrientedBox3D, Polygon2D};
use crate::raster::{render_depth, RenderScene};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneCamera {
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
}

impl SceneCamera {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_fov(self.fov_deg, self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBox {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    /// Degrees, canonical in `[-45, 45)`.
    pub yaw_deg: f64,
    pub label: Option<String>,
}

impl SceneBox {
    pub fn from_box(b: &OrientedBox3D) -> Self {
        let mut out = Self {
            center: b.center.coords.into(),
            half_extents: b.half_extents.into(),
            yaw_deg: b.yaw.to_degrees(),
            label: b.label.clone(),
        };
        out.canonicalize();
        out
    }

    pub fn to_box(&self) -> Result<OrientedBox3D> {
        let b = OrientedBox3D::new(
            Point3::from(self.center),
            Vector3::from(self.half_extents),
            self.yaw_deg.to_radians(),
        )?;
        Ok(match &self.label {
            Some(l) => b.with_label(l.clone()),
            None => b,
        })
    }

    /// Folds `yaw_deg` into `[-45, 45)`, swapping x/z extents per quarter turn.
    /// Returns whether anything changed.
    pub fn canonicalize(&mut self) -> bool {
        let (yaw, swap) = canonical_yaw_deg(self.yaw_deg);
        let changed = yaw != self.yaw_deg || swap;
        if swap {
            self.half_extents.swap(0, 2);
        }
        self.yaw_deg = yaw;
        changed
    }
}

fn canonical_yaw_deg(yaw: f64) -> (f64, bool) {
    let k = ((yaw + 45.0) / 90.0).floor();
    let mut y = yaw - k * 90.0;
    let mut odd = (k as i64).rem_euclid(2) == 1;
    if y >= 45.0 {
        y -= 90.0;
        odd = !odd;
    } else if y < -45.0 {
        y += 90.0;
        odd = !odd;
    }
    (y, odd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub camera: SceneCamera,
    pub footprint: Polygon2D,
    pub y_min: f64,
    pub y_max: f64,
    pub include_floor: bool,
    pub include_ceiling: bool,
    pub far_m: f64,
    pub boxes: Vec<SceneBox>,
}

/// A parsed scene plus the normalizations applied while loading.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScene {
    pub scene: SceneSpec,
    pub notes: Vec<String>,
}

impl SceneSpec {
    pub fn render_scene(&self) -> Result<RenderScene> {
        let mut rs = RenderScene::new(self.far_m);
        rs.meshes.push(extrude_polygon_to_planes(&self.footprint, self.y_min, self.y_max)?);
        rs.boxes = self.boxes.iter().map(SceneBox::to_box).collect::<Result<_>>()?;
        rs.floor_y = self.include_floor.then_some(self.y_min);
        rs.ceiling_y = self.include_ceiling.then_some(self.y_max);
        Ok(rs)
    }

    /// Renders the condition from the scene camera, optionally at another
    /// image size with the same field of view.
    pub fn render_depth(&self, size: Option<(u32, u32)>) -> Result<DepthMap> {
        let cam = match size {
            Some((w, h)) => CameraIntrinsics::from_fov(self.camera.fov_deg, w, h)?,
            None => self.camera.intrinsics()?,
        };
        render_depth(&self.render_scene()?, &cam)
    }

    pub fn to_value(&self) -> Value {
        let boxes: Vec<Value> = self
            .boxes
            .iter()
            .map(|b| {
                let mut m = Map::new();
                m.insert("center".into(), floats(&b.center));
                m.insert("half_extents".into(), floats(&b.half_extents));
                m.insert("yaw_deg".into(), float(b.yaw_deg));
                if let Some(l) = &b.label {
                    m.insert("label".into(), Value::String(l.clone()));
                }
                Value::Object(m)
            })
            .collect();
        json!({
            "version": SCHEMA_VERSION,
            "units": "meters",
            "camera": {
                "fov_deg": float(self.camera.fov_deg),
                "width": self.camera.width,
                "height": self.camera.height,
            },
            "footprint": self.footprint.vertices().iter().map(|p| floats(&[p.x, p.y])).collect::<Vec<_>>(),
            "y_min": float(self.y_min),
            "y_max": float(self.y_max),
            "include_floor": self.include_floor,
            "include_ceiling": self.include_ceiling,
            "far_m": float(self.far_m),
            "boxes": boxes,
        })
    }

    /// Canonical file bytes (ends with a newline).
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(&self.to_value()).expect("scene values are always serializable");
        out.push(b'\n');
        out
    }

    pub fn from_value(v: &Value) -> Result<LoadedScene> {
        parse_scene(v)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<LoadedScene> {
        let v: Value = serde_json::from_slice(bytes)?;
        parse_scene(&v)
    }
}

/// Rounds to 9 significant digits.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn float(x: f64) -> Value {
    json!(round_sig9(x))
}

fn floats(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| float(x)).collect())
}

pub fn load_scene(path: &Path) -> Result<LoadedScene> {
    SceneSpec::from_slice(&std::fs::read(path)?)
}

pub fn save_scene(scene: &SceneSpec, path: &Path) -> Result<()> {
    std::fs::write(path, scene.to_canonical_bytes())?;
    Ok(())
}

struct Checker {
    issues: Vec<ValidationIssue>,
}

impl Checker {
    fn fail(&mut self, pointer: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            pointer: pointer.into(),
            message: message.into(),
        });
    }

    fn get<'a>(&mut self, obj: &'a Map<String, Value>, base: &str, key: &str) -> Option<&'a Value> {
        let v = obj.get(key);
        if v.is_none() {
            self.fail(format!("{base}/{key}"), "required field is missing");
        }
        v
    }

    fn number(&mut self, v: Option<&Value>, pointer: &str) -> Option<f64> {
        let x = v?.as_f64().filter(|x| x.is_finite());
        if x.is_none() {
            self.fail(pointer, "expected a finite number");
        }
        x
    }

    fn positive(&mut self, v: Option<&Value>, pointer: &str) -> Option<f64> {
        let x = self.number(v, pointer)?;
        if x <= 0.0 {
            self.fail(pointer, format!("must be positive, got {x}"));
            return None;
        }
        Some(x)
    }

    fn boolean(&mut self, v: Option<&Value>, pointer: &str) -> Option<bool> {
        let b = v?.as_bool();
        if b.is_none() {
            self.fail(pointer, "expected a boolean");
        }
        b
    }

    fn dimension(&mut self, v: Option<&Value>, pointer: &str) -> Option<u32> {
        let d = v?.as_u64().filter(|d| *d > 0 && *d <= u32::MAX as u64).map(|d| d as u32);
        if d.is_none() {
            self.fail(pointer, "expected a positive integer");
        }
        d
    }

    fn number_at(&mut self, obj: &Map<String, Value>, base: &str, key: &str) -> Option<f64> {
        let v = self.get(obj, base, key);
        self.number(v, &format!("{base}/{key}"))
    }

    fn positive_at(&mut self, obj: &Map<String, Value>, base: &str, key: &str) -> Option<f64> {
        let v = self.get(obj, base, key);
        self.positive(v, &format!("{base}/{key}"))
    }

    fn boolean_at(&mut self, obj: &Map<String, Value>, base: &str, key: &str) -> Option<bool> {
        let v = self.get(obj, base, key);
        self.boolean(v, &format!("{base}/{key}"))
    }

    fn dimension_at(&mut self, obj: &Map<String, Value>, base: &str, key: &str) -> Option<u32> {
        let v = self.get(obj, base, key);
        self.dimension(v, &format!("{base}/{key}"))
    }

    fn vec3_at(&mut self, obj: &Map<String, Value>, base: &str, key: &str) -> Option<[f64; 3]> {
        let v = self.get(obj, base, key);
        self.vec_n::<3>(v, &format!("{base}/{key}"))
    }

    fn vec_n<const N: usize>(&mut self, v: Option<&Value>, pointer: &str) -> Option<[f64; N]> {
        let arr = v?.as_array();
        match arr {
            Some(a) if a.len() == N => {
                let mut out = [0.0; N];
                let mut ok = true;
                for (i, x) in a.iter().enumerate() {
                    match self.number(Some(x), &format!("{pointer}/{i}")) {
                        Some(x) => out[i] = x,
                        None => ok = false,
                    }
                }
                ok.then_some(out)
            }
            _ => {
                self.fail(pointer, format!("expected an array of {N} numbers"));
                None
            }
        }
    }
}

fn parse_scene(root: &Value) -> Result<LoadedScene> {
    let Some(obj) = root.as_object() else {
        return Err(Error::Validation(vec![ValidationIssue {
            pointer: String::new(),
            message: "scene must be a JSON object".into(),
        }]));
    };
    let mut c = Checker { issues: Vec::new() };
    let mut notes = Vec::new();

    match obj.get("version").map(|v| v.as_u64()) {
        None => c.fail("/version", "required field is missing"),
        Some(Some(SCHEMA_VERSION)) => {}
        Some(Some(v)) if v > SCHEMA_VERSION => c.fail("/version", format!("unsupported newer schema version {v}")),
        Some(_) => c.fail("/version", format!("expected {SCHEMA_VERSION}")),
    }
    if let Some(u) = obj.get("units") {
        if u.as_str() != Some("meters") {
            c.fail("/units", "units must be \"meters\"");
        }
    }
    const KNOWN: [&str; 11] = [
        "version",
        "units",
        "camera",
        "footprint",
        "y_min",
        "y_max",
        "include_floor",
        "include_ceiling",
        "far_m",
        "boxes",
        "$schema",
    ];
    for key in obj.keys().filter(|k| !KNOWN.contains(&k.as_str())) {
        c.fail(format!("/{key}"), "unknown field");
    }

    let camera = match c.get(obj, "", "camera").map(|v| v.as_object()) {
        Some(Some(cam)) => {
            let fov = c.number_at(cam, "/camera", "fov_deg");
            if let Some(f) = fov {
                if !(f > 0.0 && f < 180.0) {
                    c.fail("/camera/fov_deg", format!("must be in (0, 180), got {f}"));
                }
            }
            let width = c.dimension_at(cam, "/camera", "width");
            let height = c.dimension_at(cam, "/camera", "height");
            match (fov, width, height) {
                (Some(fov_deg), Some(width), Some(height)) if fov_deg > 0.0 && fov_deg < 180.0 => Some(SceneCamera {
                    fov_deg,
                    width,
                    height,
                }),
                _ => None,
            }
        }
        Some(None) => {
            c.fail("/camera", "expected an object");
            None
        }
        None => None,
    };

    let footprint = match c.get(obj, "", "footprint").map(|v| v.as_array()) {
        Some(Some(arr)) => {
            let pts: Vec<Option<[f64; 2]>> = arr
                .iter()
                .enumerate()
                .map(|(i, v)| c.vec_n::<2>(Some(v), &format!("/footprint/{i}")))
                .collect();
            if pts.iter().all(Option::is_some) {
                let verts: Vec<Point2<f64>> = pts.into_iter().flatten().map(Point2::from).collect();
                match polygon_problem(&verts) {
                    Some(problem) => {
                        c.fail("/footprint", problem);
                        None
                    }
                    None => Polygon2D::new(verts).map_err(|e| c.fail("/footprint", e.to_string())).ok(),
                }
            } else {
                None
            }
        }
        Some(None) => {
            c.fail("/footprint", "expected an array of [x, z] pairs");
            None
        }
        None => None,
    };

    let y_min = c.number_at(obj, "", "y_min");
    let y_max = c.number_at(obj, "", "y_max");
    if let (Some(lo), Some(hi)) = (y_min, y_max) {
        if lo >= hi {
            c.fail("/y_max", format!("y_max ({hi}) must exceed y_min ({lo})"));
        }
    }
    let include_floor = c.boolean_at(obj, "", "include_floor");
    let include_ceiling = c.boolean_at(obj, "", "include_ceiling");
    let far_m = c.positive_at(obj, "", "far_m");

    let mut boxes = Vec::new();
    match obj.get("boxes").map(|v| v.as_array()) {
        None => {}
        Some(None) => c.fail("/boxes", "expected an array"),
        Some(Some(arr)) => {
            for (i, bv) in arr.iter().enumerate() {
                let base = format!("/boxes/{i}");
                let Some(bo) = bv.as_object() else {
                    c.fail(base, "expected an object");
                    continue;
                };
                for key in bo.keys().filter(|k| !["center", "half_extents", "yaw_deg", "label"].contains(&k.as_str())) {
                    c.fail(format!("{base}/{key}"), "unknown field");
                }
                let center = c.vec3_at(bo, &base, "center");
                let half = c.vec3_at(bo, &base, "half_extents");
                if let Some(h) = half {
                    for (k, x) in h.iter().enumerate() {
                        if *x <= 0.0 {
                            c.fail(format!("{base}/half_extents/{k}"), format!("must be positive, got {x}"));
                        }
                    }
                }
                let yaw = c.number_at(bo, &base, "yaw_deg");
                let label = match bo.get("label") {
                    None | Some(Value::Null) => None,
                    Some(Value::String(s)) => Some(s.clone()),
                    Some(_) => {
                        c.fail(format!("{base}/label"), "expected a string");
                        None
                    }
                };
                if let (Some(center), Some(half_extents), Some(yaw_deg)) = (center, half, yaw) {
                    if half_extents.iter().all(|h| *h > 0.0) {
                        let mut b = SceneBox {
                            center,
                            half_extents,
                            yaw_deg,
                            label,
                        };
                        if b.canonicalize() {
                            notes.push(format!(
                                "{base}/yaw_deg: normalized {yaw_deg} to {} (canonical range [-45, 45))",
                                b.yaw_deg
                            ));
                        }
                        boxes.push(b);
                    }
                }
            }
        }
    }

    if let (Some(fp), Some(far)) = (&footprint, far_m) {
        let max_z = fp.vertices().iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        if max_z >= far {
            c.fail("/far_m", format!("far_m ({far}) must exceed the farthest footprint z ({max_z})"));
        }
    }

    if !c.issues.is_empty() {
        return Err(Error::Validation(c.issues));
    }
    Ok(LoadedScene {
        scene: SceneSpec {
            camera: camera.expect("checked"),
            footprint: footprint.expect("checked"),
            y_min: y_min.expect("checked"),
            y_max: y_max.expect("checked"),
            include_floor: include_floor.expect("checked"),
            include_ceiling: include_ceiling.expect("checked"),
            far_m: far_m.expect("checked"),
            boxes,
        },
        notes,
    })
}

/// JSON Schema for scene files.
pub fn scene_json_schema() -> Value {
    let vec3 = json!({"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3});
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "scene",
        "type": "object",
        "required": ["version", "camera", "footprint", "y_min", "y_max", "include_floor", "include_ceiling", "far_m"],
        "additionalProperties": false,
        "properties": {
            "$schema": {"type": "string"},
            "version": {"const": SCHEMA_VERSION},
            "units": {"const": "meters"},
            "camera": {
                "type": "object",
                "required": ["fov_deg", "width", "height"],
                "properties": {
                    "fov_deg": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 180},
                    "width": {"type": "integer", "minimum": 1},
                    "height": {"type": "integer", "minimum": 1}
                }
            },
            "footprint": {
                "description": "counter-clockwise simple polygon of [x, z] vertices in meters",
                "type": "array",
                "minItems": 3,
                "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
            },
            "y_min": {"type": "number"},
            "y_max": {"type": "number"},
            "include_floor": {"type": "boolean"},
            "include_ceiling": {"type": "boolean"},
            "far_m": {"type": "number", "exclusiveMinimum": 0},
            "boxes": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["center", "half_extents", "yaw_deg"],
                    "additionalProperties": false,
                    "properties": {
                        "center": vec3,
                        "half_extents": vec3,
                        "yaw_deg": {"type": "number"},
                        "label": {"type": "string"}
                    }
                }
            }
        }
    })
}
