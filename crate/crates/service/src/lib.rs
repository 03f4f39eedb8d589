//! HTTP facade over map building, keypoint validation and planning. Sessions
//! hold an immutable map plus the operator's current keypoints; every mutation
//! bumps the session revision.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Mutex;

use scene_nav::geometry::{parse_geometry, AxisRemap, GeometryFormat};
use scene_nav::obstacle_map::{GridFrame, ObstacleMap};
use scene_nav::pipeline::{self, LoadedScene, MapConfig, PlanDocument, PlanSection};
use scene_nav::planner::{validate_keypoints, Keypoint, KeypointStatus, PlanError, Simplify, StepCost};

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub map: MapConfig,
    pub plan: PlanSection,
    /// Reject keypoint lists containing out-of-bounds entries.
    pub strict: bool,
    /// One JSON snapshot per revision under `<dir>/session-<id>/`.
    pub persist_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MapSummary {
    pub frame: GridFrame,
    pub max_value: f64,
    /// sha256 of the CSV export.
    pub checksum: String,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum LastResult {
    Plan { plan: PlanDocument },
    Error { error: ApiError },
}

pub struct Session {
    pub id: u64,
    pub map: Arc<ObstacleMap>,
    pub map_csv: Arc<String>,
    pub summary: MapSummary,
    pub keypoints: Vec<Keypoint>,
    pub revision: u64,
    pub last: Option<LastResult>,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    id: u64,
    revision: u64,
    map: &'a MapSummary,
    keypoints: &'a [Keypoint],
    last: &'a Option<LastResult>,
}

impl Session {
    fn snapshot(&self) -> Snapshot<'_> {
        Snapshot {
            id: self.id,
            revision: self.revision,
            map: &self.summary,
            keypoints: &self.keypoints,
            last: &self.last,
        }
    }
}

pub struct AppState {
    cfg: ServiceConfig,
    next_id: AtomicU64,
    sessions: RwLock<BTreeMap<u64, Arc<Mutex<Session>>>>,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            cfg,
            next_id: AtomicU64::new(1),
            sessions: RwLock::new(BTreeMap::new()),
        })
    }

    fn session(&self, id: u64) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}")))
    }

    fn persist(&self, s: &Session) -> Result<(), ApiError> {
        let Some(dir) = &self.cfg.persist_dir else {
            return Ok(());
        };
        let dir = dir.join(format!("session-{}", s.id));
        let body = serde_json::to_string_pretty(&s.snapshot()).expect("snapshot serializes");
        std::fs::create_dir_all(&dir)
            .and_then(|_| std::fs::write(dir.join(format!("rev-{:06}.json", s.revision)), body))
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "persist_failed", e.to_string()))
    }
}

/// Machine-readable `code` plus a human message; extra fields ride in `detail`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail: None,
        }
    }

    fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = Some(detail);
        self
    }

    fn from_plan(e: &PlanError) -> Self {
        let mut detail = serde_json::Map::new();
        if let Some(i) = e.segment_index() {
            detail.insert("segment".into(), i.into());
        }
        let err = match e.root() {
            PlanError::InvalidNodes(nodes) => {
                detail.insert("invalid".into(), serde_json::to_value(nodes).expect("serializable"));
                ApiError::new(StatusCode::CONFLICT, "invalid_nodes", e.to_string())
            }
            PlanError::NoPath(summary) => {
                detail.insert("explored".into(), serde_json::to_value(summary).expect("serializable"));
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "no_path", e.to_string())
            }
            PlanError::TooFewKeypoints(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "too_few_keypoints", e.to_string()),
            _ => ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", e.to_string()),
        };
        err.with_detail(detail.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/map", get(get_map))
        .route("/sessions/{id}/keypoints", put(put_keypoints))
        .route("/sessions/{id}/plan", post(post_plan))
        .with_state(state)
}

#[derive(Deserialize)]
struct CreateJson {
    fixture: String,
}

#[derive(Deserialize, Default)]
struct UploadQuery {
    format: Option<String>,
    #[serde(default)]
    scale: Option<f64>,
}

#[derive(Serialize)]
struct Created {
    id: u64,
    revision: u64,
    map: MapSummary,
    keypoints: Vec<Keypoint>,
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"))
}

/// JSON `{"fixture": name}`, or a raw scene body with `?format=obj|ply|xyz`.
async fn create_session(
    State(state): State<Arc<AppState>>,
    Query(q): Query<UploadQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let spacing = state.cfg.map.sample_spacing;
    let map_cfg = state.cfg.map.clone();
    let json = is_json(&headers);
    let built = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let scene = if json {
            let req: CreateJson = serde_json::from_slice(&body).map_err(|e| bad_request(e.to_string()))?;
            LoadedScene::fixture(&req.fixture, spacing)
                .ok_or_else(|| bad_request(format!("unknown fixture `{}`", req.fixture)))?
        } else {
            let format: GeometryFormat = q
                .format
                .as_deref()
                .ok_or_else(|| bad_request("raw uploads need ?format=obj|ply|xyz"))?
                .parse()
                .map_err(|e: scene_nav::geometry::GeometryError| bad_request(e.to_string()))?;
            let remap = AxisRemap {
                scale: q.scale.unwrap_or(1.0),
                ..AxisRemap::default()
            };
            let geometry = parse_geometry(&body, format, &remap)
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "parse_error", e.to_string()))?;
            LoadedScene::from_geometry(geometry, spacing)
        };
        let map = pipeline::build_planning_map(&scene.points, &map_cfg)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "map_error", e.to_string()))?;
        Ok((scene.fixture_keypoints.unwrap_or_default(), map))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let (keypoints, map) = built;
    let csv = map.to_csv();
    let summary = MapSummary {
        frame: *map.frame(),
        max_value: map.max_value(),
        checksum: hex::encode(Sha256::digest(csv.as_bytes())),
    };
    let id = state.next_id.fetch_add(1, Ordering::SeqCst);
    let session = Session {
        id,
        map: Arc::new(map),
        map_csv: Arc::new(csv),
        summary: summary.clone(),
        keypoints: keypoints.clone(),
        revision: 0,
        last: None,
    };
    state.persist(&session)?;
    state
        .sessions
        .write()
        .expect("session table poisoned")
        .insert(id, Arc::new(Mutex::new(session)));
    log::info!("session {id} created, map {}x{}", summary.frame.width, summary.frame.height);
    Ok((
        StatusCode::CREATED,
        Json(Created {
            id,
            revision: 0,
            map: summary,
            keypoints,
        }),
    ))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let session = state.session(id)?;
    let s = session.lock().await;
    Ok(Json(s.snapshot()).into_response())
}

#[derive(Deserialize, Default)]
struct MapQuery {
    format: Option<String>,
}

/// CSV by default; PNG when asked for with `Accept: image/png` or `?format=png`.
async fn get_map(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    Query(q): Query<MapQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let session = state.session(id)?;
    let (map, csv) = {
        let s = session.lock().await;
        (s.map.clone(), s.map_csv.clone())
    };
    let accept = headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()).unwrap_or("");
    let png = match q.format.as_deref() {
        Some("png") => true,
        Some("csv") => false,
        Some(other) => return Err(bad_request(format!("unknown map format `{other}`"))),
        None => accept.contains("image/png") && !accept.contains("text/csv"),
    };
    if png {
        let bytes = map
            .to_png()
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "encode_failed", e.to_string()))?;
        Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
    } else {
        Ok(([(header::CONTENT_TYPE, "text/csv")], csv.as_str().to_owned()).into_response())
    }
}

#[derive(Deserialize)]
struct KeypointsBody {
    keypoints: Vec<Keypoint>,
    strict: Option<bool>,
}

#[derive(Serialize)]
struct Validation {
    revision: u64,
    all_walkable: bool,
    statuses: Vec<KeypointStatus>,
}

async fn put_keypoints(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    body: Bytes,
) -> Result<Json<Validation>, ApiError> {
    let session = state.session(id)?;
    let req: KeypointsBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.to_string()))?;
    if req.keypoints.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_keypoints", "keypoint list is empty"));
    }
    let mut s = session.lock().await;
    let statuses = validate_keypoints(&s.map, &req.keypoints);
    let strict = req.strict.unwrap_or(state.cfg.strict);
    if strict {
        let oob: Vec<usize> = statuses
            .iter()
            .enumerate()
            .filter(|(_, st)| matches!(st, KeypointStatus::OutOfBounds { .. }))
            .map(|(i, _)| i)
            .collect();
        if !oob.is_empty() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "out_of_bounds",
                format!("keypoints {oob:?} lie outside the map"),
            )
            .with_detail(serde_json::json!({ "indices": oob, "statuses": statuses })));
        }
    }
    s.keypoints = req.keypoints;
    s.revision += 1;
    state.persist(&s)?;
    Ok(Json(Validation {
        revision: s.revision,
        all_walkable: statuses.iter().all(KeypointStatus::is_walkable),
        statuses,
    }))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct PlanBody {
    lambda: Option<f64>,
    step_cost: Option<StepCost>,
    blocked_above: Option<f64>,
    simplify: Option<Simplify>,
    base_height: Option<f64>,
    frame_interval: Option<usize>,
}

/// 200 with the same document `scene-nav plan` writes; 409 on invalid
/// keypoints; 422 on no path, naming the failing segment.
async fn post_plan(State(state): State<Arc<AppState>>, Path(id): Path<u64>, body: Bytes) -> Result<Response, ApiError> {
    let session = state.session(id)?;
    let req: PlanBody = if body.is_empty() {
        PlanBody::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.to_string()))?
    };
    let mut section = state.cfg.plan.clone();
    if let Some(v) = req.step_cost {
        section.step_cost = v;
    }
    if req.blocked_above.is_some() {
        section.blocked_above = req.blocked_above;
    }
    if let Some(v) = req.simplify {
        section.simplify = v;
    }
    if let Some(v) = req.base_height {
        section.base_height = v;
    }
    if let Some(v) = req.frame_interval {
        section.frame_interval = v;
    }
    let config = section.plan_config(req.lambda.unwrap_or(section.lambda));

    let mut s = session.lock().await;
    let (map, keypoints) = (s.map.clone(), s.keypoints.clone());
    let result = tokio::task::spawn_blocking(move || pipeline::plan_document(&map, &keypoints, &config))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    s.revision += 1;
    let response = match result {
        Ok(doc) => {
            let body = doc.to_json();
            s.last = Some(LastResult::Plan { plan: doc });
            Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
        }
        Err(e) => {
            let err = ApiError::from_plan(&e);
            s.last = Some(LastResult::Error { error: err.clone() });
            Err(err)
        }
    };
    state.persist(&s)?;
    response
}
