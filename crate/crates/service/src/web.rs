//! JSON HTTP API over the registry.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, put};
use axum::Router;
use base64::Engine;
use chrono::SecondsFormat;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::camera::{BBox, CameraConfig};
use crate::registry::{Registry, RegistryError, StallRecord};

pub const ADMIN_TOKEN_HEADER: &str = "x-admin-token";
pub const CAPTURED_AT_HEADER: &str = "x-captured-at";
pub const JSON_CONTENT_TYPE: &str = "application/json; charset=utf-8";

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
    /// Mutating requests are refused when no token is configured.
    pub admin_token: Option<String>,
}

/// Error body shared by every endpoint: `{"code": ..., "message": ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize, Deserialize)]
struct ErrorBody {
    code: String,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, "{}", self.message);
        }
        json_response(
            self.status,
            &ErrorBody {
                code: self.code.to_string(),
                message: self.message,
            },
        )
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let msg = e.to_string();
        match e {
            RegistryError::LotNotFound(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "lot_not_found", msg)
            }
            RegistryError::StallNotFound { .. } => {
                ApiError::new(StatusCode::NOT_FOUND, "stall_not_found", msg)
            }
            RegistryError::CameraNotFound(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "camera_not_found", msg)
            }
            RegistryError::InvalidBbox(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_bbox", msg)
            }
            RegistryError::Invalid(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_value", msg)
            }
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

type ApiResult = Result<Response, ApiError>;

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let bytes = serde_json::to_vec(body).expect("API types serialize");
    let mut resp = (status, bytes).into_response();
    resp.headers_mut().insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static(JSON_CONTENT_TYPE),
    );
    resp
}

fn ok<T: Serialize>(body: &T) -> ApiResult {
    Ok(json_response(StatusCode::OK, body))
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))
}

fn require_admin(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let Some(expected) = state.admin_token.as_deref() else {
        return Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "no admin token configured; mutating requests are disabled",
        ));
    };
    match headers.get(ADMIN_TOKEN_HEADER).map(|v| v.as_bytes()) {
        Some(got) if constant_time_eq(got, expected.as_bytes()) => Ok(()),
        Some(_) => Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "admin token mismatch",
        )),
        None => Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing X-Admin-Token header",
        )),
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Stall as returned by the API.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct StallView {
    pub stall_id: u32,
    pub bbox: BBox,
    pub camera_id: String,
    pub status: String,
    pub updated_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob_png_base64: Option<String>,
}

impl StallView {
    fn from_record(r: &StallRecord, include_blob: bool) -> Self {
        StallView {
            stall_id: r.stall_id,
            bbox: r.bbox,
            camera_id: r.camera_id.clone(),
            status: r.status.to_string(),
            updated_at: r.updated_at.to_rfc3339_opts(SecondsFormat::Millis, true),
            blob_png_base64: include_blob
                .then(|| base64::engine::general_purpose::STANDARD.encode(&r.blob)),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/api/lots", get(list_lots).post(create_lot))
        .route("/api/lots/{lot}/stalls", get(lot_stalls))
        .route("/api/lots/{lot}/summary", get(lot_summary))
        .route("/api/lots/{lot}/cameras", get(lot_cameras))
        .route(
            "/api/lots/{lot}/stalls/{stall}",
            put(put_stall).delete(delete_stall),
        )
        .route("/api/lots/{lot}/cameras/{cam}/frame", get(camera_frame))
        .route("/api/cameras", axum::routing::post(create_camera))
        .fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

async fn healthz(State(state): State<AppState>) -> ApiResult {
    let version = state.registry.schema_version()?;
    ok(&serde_json::json!({ "status": "ok", "schema_version": version }))
}

async fn list_lots(State(state): State<AppState>) -> ApiResult {
    ok(&state.registry.list_lots()?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewLot {
    lot_id: String,
    display_name: Option<String>,
}

async fn create_lot(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    require_admin(&state, &headers)?;
    let req: NewLot = parse_body(&body)?;
    let name = req.display_name.unwrap_or_else(|| req.lot_id.clone());
    ok(&state.registry.upsert_lot(&req.lot_id, &name)?)
}

#[derive(Deserialize)]
struct StallQuery {
    #[serde(default)]
    include_blobs: bool,
}

async fn lot_stalls(
    State(state): State<AppState>,
    Path(lot): Path<String>,
    Query(q): Query<StallQuery>,
) -> ApiResult {
    let stalls = state.registry.lot_status(&lot, q.include_blobs)?;
    let views: Vec<StallView> = stalls
        .iter()
        .map(|s| StallView::from_record(s, q.include_blobs))
        .collect();
    ok(&views)
}

async fn lot_summary(State(state): State<AppState>, Path(lot): Path<String>) -> ApiResult {
    ok(&state.registry.summary(&lot)?)
}

#[derive(Serialize)]
struct CameraView {
    camera: CameraConfig,
    health: crate::registry::CameraHealth,
}

async fn lot_cameras(State(state): State<AppState>, Path(lot): Path<String>) -> ApiResult {
    let cams = state.registry.cameras_for_lot(&lot)?;
    let views = cams
        .into_iter()
        .map(|c| {
            let health = state.registry.camera_health(&c.camera_id)?;
            Ok(CameraView {
                camera: c.redacted(),
                health,
            })
        })
        .collect::<Result<Vec<_>, RegistryError>>()?;
    ok(&views)
}

/// Coordinates as sent by clients, signed so negative values reach
/// validation instead of failing deserialization.
#[derive(Deserialize)]
struct RawBBox {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
}

#[derive(Deserialize)]
struct StallUpdate {
    bbox: RawBBox,
    camera_id: String,
}

fn parse_stall_id(raw: &str) -> Result<u32, ApiError> {
    raw.parse().map_err(|_| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_stall_id",
            format!("stall id must be a non-negative integer, got {raw:?}"),
        )
    })
}

fn checked_bbox(b: &RawBBox) -> Result<BBox, ApiError> {
    let invalid = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_bbox", m);
    let field = |name: &str, v: i64| {
        u32::try_from(v).map_err(|_| {
            invalid(format!(
                "{name} must be a non-negative 32-bit integer, got {v}"
            ))
        })
    };
    let bbox = BBox::new(
        field("x", b.x)?,
        field("y", b.y)?,
        field("w", b.w)?,
        field("h", b.h)?,
    );
    bbox.validate().map_err(invalid)?;
    Ok(bbox)
}

async fn put_stall(
    State(state): State<AppState>,
    Path((lot, stall)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    require_admin(&state, &headers)?;
    let stall_id = parse_stall_id(&stall)?;
    let req: StallUpdate = parse_body(&body)?;
    let bbox = checked_bbox(&req.bbox)?;
    let rec = state
        .registry
        .upsert_stall(&lot, stall_id, bbox, &req.camera_id)?;
    ok(&StallView::from_record(&rec, false))
}

async fn delete_stall(
    State(state): State<AppState>,
    Path((lot, stall)): Path<(String, String)>,
    headers: HeaderMap,
) -> Result<StatusCode, ApiError> {
    require_admin(&state, &headers)?;
    let stall_id = parse_stall_id(&stall)?;
    state.registry.delete_stall(&lot, stall_id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn camera_frame(
    State(state): State<AppState>,
    Path((lot, cam)): Path<(String, String)>,
) -> ApiResult {
    state.registry.get_lot(&lot)?;
    let camera = state.registry.get_camera(&cam)?;
    if camera.lot_id != lot {
        return Err(RegistryError::CameraNotFound(cam).into());
    }
    let Some(frame) = state.registry.latest_frame(&cam)? else {
        return Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "no_frame_yet",
            format!("camera {cam:?} has not delivered a frame yet"),
        ));
    };
    let captured = frame
        .captured_at
        .to_rfc3339_opts(SecondsFormat::Millis, true);
    let mut resp = frame.png.into_response();
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    h.insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
    h.insert(
        CAPTURED_AT_HEADER,
        HeaderValue::from_str(&captured).expect("ASCII timestamp"),
    );
    Ok(resp)
}

async fn create_camera(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    require_admin(&state, &headers)?;
    let cam: CameraConfig = parse_body(&body)?;
    cam.validate()
        .map_err(|m| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_camera", m))?;
    let stored = state.registry.upsert_camera(&cam)?;
    ok(&stored.redacted())
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn serve(
    state: AppState,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
