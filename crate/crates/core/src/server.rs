//! HTTP labeling service for the browser annotation tool.
//!
//! A data directory holds one subdirectory per scene with `scene.ply` or
//! `scene.json`, `segments.json`, and optionally `labels.json` (seg-level
//! labels, rewritten on every accepted click) and `pseudo.json` (grouping
//! result). An optional top-level `classes.json` maps class ids to names.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::annotation::{load_labels, save_labels, SegLevelLabelSet};
use crate::error::{Error, Result};
use crate::overseg::segmentation_from_json;
use crate::pipeline::PseudoLabels;
use crate::scene::{load_scene, Scene, SceneFormat, Segmentation};

pub struct SceneRecord {
    pub scene: Scene,
    pub segmentation: Segmentation,
    pub labels: SegLevelLabelSet,
    /// Incremented on every accepted change.
    pub revision: u64,
    pub result: Option<PseudoLabels>,
    /// Where accepted labels are written back, if anywhere.
    pub labels_path: Option<PathBuf>,
}

impl SceneRecord {
    pub fn new(scene: Scene, segmentation: Segmentation, labels: SegLevelLabelSet) -> Result<Self> {
        if scene.len() != segmentation.num_points() {
            return Err(Error::Shape(format!(
                "scene has {} points, segmentation {}",
                scene.len(),
                segmentation.num_points()
            )));
        }
        labels.validate(Some(&segmentation))?;
        Ok(SceneRecord {
            scene,
            segmentation,
            labels,
            revision: 0,
            result: None,
            labels_path: None,
        })
    }
}

pub struct AppState {
    pub classes: BTreeMap<u32, String>,
    scenes: BTreeMap<String, Mutex<SceneRecord>>,
}

impl AppState {
    pub fn new(classes: BTreeMap<u32, String>, scenes: BTreeMap<String, SceneRecord>) -> Self {
        AppState {
            classes,
            scenes: scenes.into_iter().map(|(k, v)| (k, Mutex::new(v))).collect(),
        }
    }

    pub fn scene_ids(&self) -> Vec<&str> {
        self.scenes.keys().map(String::as_str).collect()
    }

    /// Loads every scene subdirectory of `dir`.
    pub fn load_data_dir(dir: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut subdirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        let mut scenes = BTreeMap::new();
        let mut classes = BTreeMap::new();
        for sub in subdirs {
            let Some(record) = load_scene_dir(&sub)? else {
                log::warn!("skipping {}: no scene file", sub.display());
                continue;
            };
            classes.extend(record.labels.classes.iter().map(|(k, v)| (*k, v.clone())));
            let id = sub.file_name().unwrap_or_default().to_string_lossy().into_owned();
            scenes.insert(id, record);
        }
        let class_file = dir.join("classes.json");
        if class_file.exists() {
            let v = crate::artifact::read_json(&class_file)?;
            classes = serde_json::from_value(v).map_err(|e| Error::json(class_file.display().to_string(), e))?;
        }
        Ok(AppState::new(classes, scenes))
    }
}

fn load_scene_dir(dir: &Path) -> Result<Option<SceneRecord>> {
    let Some(scene_path) = ["scene.ply", "scene.json"].iter().map(|f| dir.join(f)).find(|p| p.exists()) else {
        return Ok(None);
    };
    let scene = load_scene(&scene_path, SceneFormat::from_path(&scene_path)?)?;
    let segmentation = segmentation_from_json(&crate::artifact::read_json(&dir.join("segments.json"))?)?;
    let labels_path = dir.join("labels.json");
    let labels = if labels_path.exists() {
        load_labels(&labels_path, Some(&segmentation))?
    } else {
        SegLevelLabelSet::default()
    };
    let mut record = SceneRecord::new(scene, segmentation, labels)?;
    record.labels_path = Some(labels_path);
    let pseudo = dir.join("pseudo.json");
    if pseudo.exists() {
        let v = crate::artifact::read_json(&pseudo)?;
        let result: PseudoLabels =
            serde_json::from_value(v).map_err(|e| Error::json(pseudo.display().to_string(), e))?;
        if result.semantic.len() != record.scene.len() {
            return Err(Error::Shape(format!("{} does not match its scene", pseudo.display())));
        }
        record.result = Some(result);
    }
    Ok(Some(record))
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::LabelConflict { .. } => StatusCode::CONFLICT,
            ref e if e.is_data_error() => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type Shared = Arc<AppState>;

fn with_scene<T>(state: &AppState, id: &str, f: impl FnOnce(&mut SceneRecord) -> std::result::Result<T, ApiError>) -> std::result::Result<T, ApiError> {
    let cell = state
        .scenes
        .get(id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown scene {id}")))?;
    let mut record = cell.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
    f(&mut record)
}

#[derive(Deserialize)]
struct SceneQuery {
    stride: Option<usize>,
}

async fn get_scene(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SceneQuery>,
) -> std::result::Result<Json<Value>, ApiError> {
    let stride = q.stride.unwrap_or(1);
    if stride == 0 {
        return Err(ApiError(StatusCode::BAD_REQUEST, "stride must be positive".into()));
    }
    with_scene(&state, &id, |r| {
        let pick = |n: usize| (0..n).step_by(stride);
        let n = r.scene.len();
        Ok(Json(json!({
            "id": id,
            "num_points": n,
            "stride": stride,
            "points": pick(n).map(|i| r.scene.points()[i]).collect::<Vec<_>>(),
            "colors": pick(n).map(|i| r.scene.colors()[i]).collect::<Vec<_>>(),
            "segIndices": pick(n).map(|i| r.segmentation.seg_ids()[i]).collect::<Vec<_>>(),
        })))
    })
}

async fn get_scenes(State(state): State<Shared>) -> Json<Value> {
    Json(json!({ "scenes": state.scene_ids() }))
}

async fn get_classes(State(state): State<Shared>) -> Json<Value> {
    Json(json!(state.classes))
}

fn labels_body(r: &SceneRecord) -> Value {
    let mut v = r.labels.to_json();
    v["revision"] = json!(r.revision);
    v
}

async fn get_labels(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> std::result::Result<Json<Value>, ApiError> {
    with_scene(&state, &id, |r| Ok(Json(labels_body(r))))
}

#[derive(Deserialize)]
struct ClickRequest {
    click: usize,
    class: u32,
    instance: u32,
}

async fn post_label(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: std::result::Result<Json<ClickRequest>, JsonRejection>,
) -> std::result::Result<Json<Value>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    with_scene(&state, &id, |r| {
        let before = r.labels.labels.len();
        r.labels.apply_click(&r.segmentation, req.click, req.class, req.instance)?;
        if r.labels.labels.len() != before {
            if let Some(name) = state.classes.get(&req.class) {
                r.labels.classes.entry(req.class).or_insert_with(|| name.clone());
            }
            r.revision += 1;
            if let Some(path) = &r.labels_path {
                save_labels(&r.labels, path, None)?;
            }
        }
        Ok(Json(labels_body(r)))
    })
}

async fn get_result(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> std::result::Result<Json<Value>, ApiError> {
    with_scene(&state, &id, |r| {
        let result = r
            .result
            .as_ref()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no grouping result for scene {id}")))?;
        let clicks: Vec<Value> = r
            .labels
            .labels
            .iter()
            .map(|l| {
                json!({
                    "point": l.click_point,
                    "position": r.scene.points()[l.click_point],
                    "segment": l.segment_id,
                    "instance": l.instance_id,
                    "class": l.semantic_class,
                })
            })
            .collect();
        Ok(Json(json!({
            "semantic": result.semantic,
            "instance": result.instance,
            "clicks": clicks,
        })))
    })
}

async fn cors(req: Request, next: Next) -> Response {
    let mut res = if req.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(req).await
    };
    let h = res.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, OPTIONS"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    res
}

async fn not_found() -> ApiError {
    ApiError(StatusCode::NOT_FOUND, "no such endpoint".into())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/scenes", get(get_scenes))
        .route("/api/scene/{id}", get(get_scene))
        .route("/api/classes", get(get_classes))
        .route("/api/labels/{id}", get(get_labels).post(post_label))
        .route("/api/result/{id}", get(get_result))
        .fallback(not_found)
        .layer(middleware::from_fn(cors))
        .with_state(Arc::new(state))
}

/// Serves `state` on `addr` until the process is stopped.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(PathBuf::from(addr.to_string()), e))?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::io(PathBuf::from(addr.to_string()), e))
}
