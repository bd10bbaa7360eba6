//! Local HTTP service for interactive condition design.
//!
//! Scenes live in memory and are addressed by id. Every stored scene carries
//! an etag (SHA-256 of its canonical file bytes); updates must present the
//! current etag in `If-Match`, so concurrent editors cannot silently overwrite
//! each other. Writes to one scene are serialized by a per-scene lock; renders
//! work on a snapshot and run on the blocking pool.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::{Mutex, RwLock};

use crate::error::{Error, ValidationIssue};
use crate::geom::{CameraIntrinsics, DepthMap, OrientedBox3D};
use crate::io::{decode_depth, decode_segments, encode_depth, DepthFormat, EncodeParams, IntrinsicsFile, SceneBox, SceneSpec, SCHEMA_VERSION};
use crate::pipeline::{
    box_proxy, boundary_proxy, check_boundary_with, check_boxes, check_exact_with, BoundaryOptions, BoxCheckOptions, BoxOptions,
    ScaleAlignment, DEFAULT_ETA, DEFAULT_IOU_THETA, DEFAULT_TAU_REL,
};

pub const DEFAULT_BODY_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Largest accepted request body in bytes.
    pub body_limit: usize,
    /// Directory scenes are loaded from at startup and written to on shutdown.
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            body_limit: DEFAULT_BODY_LIMIT,
            snapshot_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
struct StoredScene {
    scene: SceneSpec,
    etag: String,
}

impl StoredScene {
    fn new(scene: SceneSpec) -> Self {
        let etag = scene_etag(&scene);
        Self { scene, etag }
    }
}

/// Content hash of a scene's canonical bytes.
pub fn scene_etag(scene: &SceneSpec) -> String {
    hex::encode(Sha256::digest(scene.to_canonical_bytes()))
}

#[derive(Default)]
pub struct SceneStore {
    scenes: RwLock<HashMap<String, Arc<Mutex<StoredScene>>>>,
    next_id: AtomicU64,
}

impl SceneStore {
    async fn insert(&self, scene: SceneSpec) -> (String, String) {
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed) + 1);
        self.insert_with_id(id.clone(), scene).await;
        let etag = self.scenes.read().await[&id].lock().await.etag.clone();
        (id, etag)
    }

    async fn insert_with_id(&self, id: String, scene: SceneSpec) {
        self.scenes
            .write()
            .await
            .insert(id, Arc::new(Mutex::new(StoredScene::new(scene))));
    }

    async fn get(&self, id: &str) -> Option<Arc<Mutex<StoredScene>>> {
        self.scenes.read().await.get(id).cloned()
    }

    /// Writes every scene as `<id>.json` into `dir`.
    pub async fn snapshot(&self, dir: &Path) -> crate::Result<usize> {
        std::fs::create_dir_all(dir)?;
        let scenes = self.scenes.read().await;
        for (id, s) in scenes.iter() {
            std::fs::write(dir.join(format!("{id}.json")), s.lock().await.scene.to_canonical_bytes())?;
        }
        Ok(scenes.len())
    }

    /// Loads `<id>.json` files written by [`SceneStore::snapshot`].
    pub async fn restore(&self, dir: &Path) -> crate::Result<usize> {
        if !dir.is_dir() {
            return Ok(0);
        }
        let mut n = 0;
        let mut max_id = 0;
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let loaded = SceneSpec::from_slice(&std::fs::read(&path)?)?;
            if let Some(num) = id.strip_prefix('s').and_then(|d| d.parse::<u64>().ok()) {
                max_id = max_id.max(num);
            }
            self.insert_with_id(id, loaded.scene).await;
            n += 1;
        }
        self.next_id.fetch_max(max_id, Ordering::Relaxed);
        Ok(n)
    }
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SceneStore>,
}

pub fn router(state: AppState, config: &ServiceConfig) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/scenes", post(create_scene))
        .route("/api/scenes/{id}", get(get_scene).put(put_scene))
        .route("/api/scenes/{id}/depth", get(scene_depth))
        .route("/api/extract/boundary", post(extract_boundary))
        .route("/api/extract/boxes", post(extract_boxes))
        .route("/api/check/{mode}", post(check))
        .layer(DefaultBodyLimit::max(config.body_limit))
        .with_state(state)
}

/// Binds `addr` and serves until Ctrl-C, then snapshots if configured.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> crate::Result<()> {
    let store = Arc::new(SceneStore::default());
    if let Some(dir) = &config.snapshot_dir {
        let n = store.restore(dir).await?;
        log::info!("restored {n} scene(s) from {}", dir.display());
    }
    let app = router(AppState { store: store.clone() }, &config);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if let Some(dir) = &config.snapshot_dir {
        let n = store.snapshot(dir).await?;
        log::info!("wrote {n} scene(s) to {}", dir.display());
    }
    Ok(())
}

pub struct ApiError {
    status: StatusCode,
    message: String,
    issues: Vec<ValidationIssue>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            issues: Vec::new(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        let issues = match &e {
            Error::Validation(issues) => issues.clone(),
            _ => Vec::new(),
        };
        Self {
            status,
            message: e.to_string(),
            issues,
        }
    }
}

impl From<axum::extract::multipart::MultipartError> for ApiError {
    fn from(e: axum::extract::multipart::MultipartError) -> Self {
        Self::new(e.status(), e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if !self.issues.is_empty() {
            body["issues"] = serde_json::to_value(&self.issues).unwrap_or(Value::Null);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn quoted(etag: &str) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{etag}\"")).expect("hex etag is a valid header")
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> crate::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn health() -> Json<Value> {
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "schema_version": SCHEMA_VERSION,
    }))
}

fn parse_scene_body(body: &[u8]) -> ApiResult<(SceneSpec, Vec<String>)> {
    let loaded = SceneSpec::from_slice(body)?;
    Ok((loaded.scene, loaded.notes))
}

async fn create_scene(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let (scene, notes) = parse_scene_body(&body)?;
    let (id, etag) = state.store.insert(scene).await;
    let mut resp = (StatusCode::CREATED, Json(json!({ "id": id, "etag": etag, "notes": notes }))).into_response();
    resp.headers_mut().insert(header::ETAG, quoted(&etag));
    Ok(resp)
}

async fn get_scene(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let entry = state.store.get(&id).await.ok_or_else(|| not_found(&id))?;
    let stored = entry.lock().await.clone();
    let mut resp = (
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        stored.scene.to_canonical_bytes(),
    )
        .into_response();
    resp.headers_mut().insert(header::ETAG, quoted(&stored.etag));
    Ok(resp)
}

fn not_found(id: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, format!("no scene with id '{id}'"))
}

fn unquote(tag: &str) -> &str {
    let tag = tag.trim();
    let tag = tag.strip_prefix("W/").unwrap_or(tag);
    tag.trim_matches('"')
}

async fn put_scene(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let entry = state.store.get(&id).await.ok_or_else(|| not_found(&id))?;
    let if_match = headers
        .get(header::IF_MATCH)
        .and_then(|v| v.to_str().ok())
        .ok_or_else(|| ApiError::new(StatusCode::PRECONDITION_REQUIRED, "PUT requires an If-Match header"))?
        .to_string();
    let (scene, notes) = parse_scene_body(&body)?;
    let mut stored = entry.lock().await;
    if unquote(&if_match) != stored.etag {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("etag mismatch: scene is at {}", stored.etag),
        ));
    }
    *stored = StoredScene::new(scene);
    let etag = stored.etag.clone();
    drop(stored);
    let mut resp = Json(json!({ "id": id, "etag": etag, "notes": notes })).into_response();
    resp.headers_mut().insert(header::ETAG, quoted(&etag));
    Ok(resp)
}

#[derive(Debug, Deserialize)]
struct DepthQuery {
    format: Option<String>,
    width: Option<u32>,
    height: Option<u32>,
}

fn content_type(format: DepthFormat) -> &'static str {
    match format {
        DepthFormat::Pfm => "image/x-portable-floatmap",
        DepthFormat::Png16 | DepthFormat::Png8inv => "image/png",
    }
}

async fn scene_depth(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<DepthQuery>,
) -> ApiResult<Response> {
    let entry = state.store.get(&id).await.ok_or_else(|| not_found(&id))?;
    let stored = entry.lock().await.clone();
    let format: DepthFormat = q.format.as_deref().unwrap_or("png16").parse()?;
    let size = match (q.width, q.height) {
        (None, None) => None,
        (w, h) => Some((
            w.unwrap_or(stored.scene.camera.width),
            h.unwrap_or(stored.scene.camera.height),
        )),
    };
    let scene = stored.scene;
    let bytes = blocking(move || encode_depth(&scene.render_depth(size)?, format, EncodeParams::default())).await?;
    let mut resp = ([(header::CONTENT_TYPE, content_type(format))], bytes).into_response();
    resp.headers_mut().insert(header::ETAG, quoted(&stored.etag));
    Ok(resp)
}

/// Multipart form fields, by name.
struct Form {
    fields: HashMap<String, Bytes>,
}

impl Form {
    async fn read(mut mp: Multipart) -> ApiResult<Self> {
        let mut fields = HashMap::new();
        while let Some(field) = mp.next_field().await? {
            let name = field
                .name()
                .ok_or_else(|| ApiError::bad_request("multipart field without a name"))?
                .to_string();
            fields.insert(name, field.bytes().await?);
        }
        Ok(Self { fields })
    }

    fn bytes(&self, name: &str) -> ApiResult<&Bytes> {
        self.fields
            .get(name)
            .ok_or_else(|| ApiError::bad_request(format!("missing multipart field '{name}'")))
    }

    fn text(&self, name: &str) -> ApiResult<Option<String>> {
        self.fields
            .get(name)
            .map(|b| {
                String::from_utf8(b.to_vec())
                    .map(|s| s.trim().to_string())
                    .map_err(|_| ApiError::bad_request(format!("field '{name}' is not UTF-8")))
            })
            .transpose()
    }

    fn parse<T: std::str::FromStr>(&self, name: &str) -> ApiResult<Option<T>> {
        self.text(name)?
            .map(|s| {
                s.parse::<T>()
                    .map_err(|_| ApiError::bad_request(format!("field '{name}' has invalid value '{s}'")))
            })
            .transpose()
    }

    fn camera(&self) -> ApiResult<IntrinsicsFile> {
        if let Some(text) = self.text("intrinsics")? {
            return serde_json::from_str(&text).map_err(|e| ApiError::bad_request(format!("intrinsics: {e}")));
        }
        match self.parse::<f64>("fov_deg")? {
            Some(fov_deg) => Ok(IntrinsicsFile::Fov { fov_deg }),
            None => Err(ApiError::bad_request("provide either 'fov_deg' or 'intrinsics'")),
        }
    }

    fn depth(&self, name: &str, camera: IntrinsicsFile) -> ApiResult<DepthMap> {
        let decoded = decode_depth(self.bytes(name)?)?;
        let k: CameraIntrinsics = camera.resolve(decoded.width, decoded.height)?;
        Ok(decoded.into_map(k)?)
    }

    fn format(&self) -> ApiResult<DepthFormat> {
        Ok(self.text("format")?.as_deref().unwrap_or("png16").parse()?)
    }

    fn alignment(&self, default: ScaleAlignment) -> ApiResult<ScaleAlignment> {
        match self.text("align")?.as_deref() {
            None => Ok(default),
            Some("none") => Ok(ScaleAlignment::None),
            Some("median") | Some("median-ratio") => Ok(ScaleAlignment::MedianRatio),
            Some(other) => Err(ApiError::bad_request(format!("unknown alignment '{other}'"))),
        }
    }
}

fn encoded_condition(map: &DepthMap, format: DepthFormat) -> crate::Result<Value> {
    let bytes = encode_depth(map, format, EncodeParams::default())?;
    Ok(json!({
        "format": format,
        "width": map.width(),
        "height": map.height(),
        "data_base64": base64::engine::general_purpose::STANDARD.encode(bytes),
    }))
}

/// Boundary options from form fields, falling back to defaults.
fn boundary_options(form: &Form) -> ApiResult<BoundaryOptions> {
    let d = BoundaryOptions::default();
    Ok(BoundaryOptions {
        method: form.parse("method")?.unwrap_or(d.method),
        cell_m: form.parse("cell_m")?.unwrap_or(d.cell_m),
        simplify_eps_cells: form.parse("simplify_eps_cells")?.unwrap_or(d.simplify_eps_cells),
        include_floor: form.parse("include_floor")?.unwrap_or(d.include_floor),
        include_ceiling: form.parse("include_ceiling")?.unwrap_or(d.include_ceiling),
        y_percentiles: (
            form.parse("y_low")?.unwrap_or(d.y_percentiles.0),
            form.parse("y_high")?.unwrap_or(d.y_percentiles.1),
        ),
        far_m: form.parse("far_m")?.or(d.far_m),
        max_edge_jump: form.parse("max_edge_jump")?.unwrap_or(d.max_edge_jump),
        refine_edges: form.parse("refine_edges")?.unwrap_or(d.refine_edges),
        split_tol_m: form.parse("split_tol_m")?.unwrap_or(d.split_tol_m),
    })
}

fn box_options(form: &Form) -> ApiResult<BoxOptions> {
    let d = BoxOptions::default();
    Ok(BoxOptions {
        min_mask_area: form.parse("min_mask_area")?.unwrap_or(d.min_mask_area),
        k_mad: form.parse("k_mad")?.unwrap_or(d.k_mad),
        far_m: form.parse("far_m")?.or(d.far_m),
    })
}

async fn extract_boundary(mp: Multipart) -> ApiResult<Json<Value>> {
    let form = Form::read(mp).await?;
    let depth = form.depth("depth", form.camera()?)?;
    let opts = boundary_options(&form)?;
    let format = form.format()?;
    let out = blocking(move || {
        let r = boundary_proxy(&depth, &opts)?;
        Ok(json!({
            "scene": r.scene.to_value(),
            "condition": encoded_condition(&r.condition, format)?,
        }))
    })
    .await?;
    Ok(Json(out))
}

async fn extract_boxes(mp: Multipart) -> ApiResult<Json<Value>> {
    let form = Form::read(mp).await?;
    let depth = form.depth("depth", form.camera()?)?;
    let segments = decode_segments(form.bytes("segments")?)?;
    let opts = box_options(&form)?;
    let format = form.format()?;
    let out = blocking(move || {
        let r = box_proxy(&depth, &segments, &opts)?;
        let mut out = r.boxes_json();
        out["condition"] = encoded_condition(&r.condition, format)?;
        Ok(out)
    })
    .await?;
    Ok(Json(out))
}

/// Parses a JSON array of scene-file boxes (`center`, `half_extents`, `yaw_deg`).
pub fn parse_box_list(text: &str) -> crate::Result<Vec<OrientedBox3D>> {
    #[derive(Deserialize)]
    struct RawBox {
        center: [f64; 3],
        half_extents: [f64; 3],
        yaw_deg: f64,
        label: Option<String>,
    }
    let value: Value = serde_json::from_str(text)?;
    // Accept either a bare list or a scene file's "boxes" member.
    let list = value.get("boxes").cloned().unwrap_or(value);
    let raw: Vec<RawBox> = serde_json::from_value(list)?;
    raw.into_iter()
        .map(|r| {
            SceneBox {
                center: r.center,
                half_extents: r.half_extents,
                yaw_deg: r.yaw_deg,
                label: r.label,
            }
            .to_box()
        })
        .collect()
}

async fn check(UrlPath(mode): UrlPath<String>, mp: Multipart) -> ApiResult<Json<Value>> {
    let form = Form::read(mp).await?;
    let camera = form.camera()?;
    let gen = form.depth("gen", camera)?;
    let tau = form.parse("tau_rel")?.unwrap_or(DEFAULT_TAU_REL);
    let report = match mode.as_str() {
        "exact" => {
            let cond = form.depth("cond", camera)?;
            let align = form.alignment(ScaleAlignment::MedianRatio)?;
            blocking(move || check_exact_with(&gen, &cond, tau, align)).await?
        }
        "boundary" => {
            let cond = form.depth("cond", camera)?;
            let eta = form.parse("eta")?.unwrap_or(DEFAULT_ETA);
            let align = form.alignment(ScaleAlignment::None)?;
            blocking(move || check_boundary_with(&gen, &cond, tau, eta, align)).await?
        }
        "boxes" => {
            let segments = decode_segments(form.bytes("segments")?)?;
            let boxes = parse_box_list(&form.text("boxes")?.ok_or_else(|| ApiError::bad_request("missing multipart field 'boxes'"))?)?;
            let opts = BoxCheckOptions {
                iou_theta: form.parse("iou_theta")?.unwrap_or(DEFAULT_IOU_THETA),
                seed: form.parse("seed")?.unwrap_or(0),
                proxy: box_options(&form)?,
                ..BoxCheckOptions::default()
            };
            blocking(move || check_boxes(&gen, &segments, &boxes, &opts)).await?
        }
        other => {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                format!("unknown check mode '{other}'; expected exact, boundary or boxes"),
            ))
        }
    };
    Ok(Json(serde_json::to_value(&report).map_err(Error::from)?))
}
