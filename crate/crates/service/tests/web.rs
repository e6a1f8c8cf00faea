mod support;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Utc};
use http_body_util::BodyExt;
use image::{Rgb, RgbImage};
use serde_json::{json, Value};
use stallwatch_service::ingest::Ingestor;
use stallwatch_service::registry::Registry;
use stallwatch_service::web::{router, AppState, JSON_CONTENT_TYPE};
use stallwatch_service::{BBox, CameraConfig};
use support::{png_bytes, Behavior, StubCamera};
use tower::ServiceExt;

const TOKEN: &str = "let-me-in";

fn app(reg: &Arc<Registry>) -> Router {
    router(AppState {
        registry: Arc::clone(reg),
        admin_token: Some(TOKEN.to_string()),
    })
}

fn registry() -> Arc<Registry> {
    let reg = Arc::new(Registry::open_in_memory().unwrap());
    reg.upsert_lot("A", "Lot A").unwrap();
    reg.upsert_camera(&CameraConfig::new(
        "c1",
        "A",
        url::Url::parse("http://127.0.0.1:1/snapshot").unwrap(),
    ))
    .unwrap();
    reg
}

/// Stalls 1..=3 with statuses vacant, occupied, unknown.
fn seeded() -> Arc<Registry> {
    let reg = registry();
    for id in 1..=3 {
        reg.upsert_stall("A", id, BBox::new(id * 10, 0, 8, 8), "c1")
            .unwrap();
    }
    reg.record_observation("A", 1, vec![], 0.1, Utc::now())
        .unwrap();
    reg.record_observation("A", 2, vec![], 0.9, Utc::now())
        .unwrap();
    reg
}

struct Reply {
    status: StatusCode,
    content_type: Option<String>,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap()
    }
}

async fn call(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
    token: Option<&str>,
) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("X-Admin-Token", t);
    }
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string());
    let body = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    Reply {
        status,
        content_type,
        headers,
        body,
    }
}

async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None, None).await
}

fn assert_error(r: &Reply, status: StatusCode, code: &str) {
    assert_eq!(r.status, status);
    assert_eq!(r.content_type.as_deref(), Some(JSON_CONTENT_TYPE));
    let v = r.json();
    let obj = v.as_object().unwrap();
    assert_eq!(obj.len(), 2, "error body {v}");
    assert_eq!(obj["code"], code);
    assert!(obj["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[tokio::test]
async fn healthz_ok() {
    let r = get(&app(&registry()), "/healthz").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["status"], "ok");
}

#[tokio::test]
async fn status_lists_seeded_stalls_in_order() {
    let r = get(&app(&seeded()), "/api/lots/A/stalls").await;
    assert_eq!(r.status, StatusCode::OK);
    let arr = r.json().as_array().unwrap().clone();
    assert_eq!(arr.len(), 3);
    let ids: Vec<u64> = arr
        .iter()
        .map(|s| s["stall_id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, vec![1, 2, 3]);
    let statuses: Vec<&str> = arr.iter().map(|s| s["status"].as_str().unwrap()).collect();
    assert_eq!(statuses, vec!["vacant", "occupied", "unknown"]);
    assert_eq!(arr[0]["bbox"], json!({"x": 10, "y": 0, "w": 8, "h": 8}));
    assert!(DateTime::parse_from_rfc3339(arr[0]["updated_at"].as_str().unwrap()).is_ok());
    assert!(arr[0].get("blob_png_base64").is_none());
}

#[tokio::test]
async fn status_can_include_blobs() {
    let reg = seeded();
    reg.record_observation("A", 1, vec![1, 2, 3], 0.1, Utc::now())
        .unwrap();
    let r = get(&app(&reg), "/api/lots/A/stalls?include_blobs=true").await;
    assert_eq!(r.json()[0]["blob_png_base64"], "AQID");
}

#[tokio::test]
async fn summary_matches_counting_oracle() {
    let reg = seeded();
    let a = app(&reg);
    let r = get(&a, "/api/lots/A/summary").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(
        r.content_type.as_deref(),
        Some("application/json; charset=utf-8")
    );
    assert_eq!(r.json(), json!({"free": 1, "total": 3, "unknown": 1}));
    let stalls = get(&a, "/api/lots/A/stalls").await.json();
    let vacant = stalls
        .as_array()
        .unwrap()
        .iter()
        .filter(|s| s["status"] == "vacant")
        .count();
    assert_eq!(r.json()["free"], vacant);
}

#[tokio::test]
async fn empty_lot_summary_is_zero() {
    let reg = registry();
    reg.upsert_lot("E", "Empty").unwrap();
    let r = get(&app(&reg), "/api/lots/E/summary").await;
    assert_eq!(r.json(), json!({"free": 0, "total": 0, "unknown": 0}));
    assert_eq!(
        get(&app(&reg), "/api/lots/E/stalls").await.json(),
        json!([])
    );
}

#[tokio::test]
async fn unknown_lot_is_404_everywhere() {
    let a = app(&seeded());
    for uri in [
        "/api/lots/Z/stalls",
        "/api/lots/Z/summary",
        "/api/lots/Z/cameras/c1/frame",
    ] {
        assert_error(&get(&a, uri).await, StatusCode::NOT_FOUND, "lot_not_found");
    }
    let r = call(
        &a,
        Method::PUT,
        "/api/lots/Z/stalls/1",
        Some(json!({"bbox": {"x": 0, "y": 0, "w": 5, "h": 5}, "camera_id": "c1"})),
        Some(TOKEN),
    )
    .await;
    assert_error(&r, StatusCode::NOT_FOUND, "lot_not_found");
}

#[tokio::test]
async fn put_stall_is_idempotent_and_creates_unknown() {
    let reg = registry();
    let a = app(&reg);
    let body = json!({"bbox": {"x": 3, "y": 4, "w": 20, "h": 30}, "camera_id": "c1"});
    let first = call(
        &a,
        Method::PUT,
        "/api/lots/A/stalls/7",
        Some(body.clone()),
        Some(TOKEN),
    )
    .await;
    let second = call(
        &a,
        Method::PUT,
        "/api/lots/A/stalls/7",
        Some(body),
        Some(TOKEN),
    )
    .await;
    assert_eq!(first.status, StatusCode::OK);
    assert_eq!(first.body, second.body);
    let v = first.json();
    assert_eq!(v["status"], "unknown");
    assert_eq!(v["stall_id"], 7);
    assert_eq!(v["bbox"], json!({"x": 3, "y": 4, "w": 20, "h": 30}));
    assert_eq!(reg.lot_status("A", false).unwrap().len(), 1);
}

#[tokio::test]
async fn bad_bbox_is_422() {
    let a = app(&registry());
    for bbox in [
        json!({"x": 0, "y": 0, "w": -5, "h": 5}),
        json!({"x": 0, "y": 0, "w": 0, "h": 5}),
        json!({"x": -1, "y": 0, "w": 5, "h": 5}),
    ] {
        let r = call(
            &a,
            Method::PUT,
            "/api/lots/A/stalls/1",
            Some(json!({"bbox": bbox, "camera_id": "c1"})),
            Some(TOKEN),
        )
        .await;
        assert_error(&r, StatusCode::UNPROCESSABLE_ENTITY, "invalid_bbox");
    }
}

#[tokio::test]
async fn malformed_body_is_400() {
    let a = app(&registry());
    let r = call(
        &a,
        Method::PUT,
        "/api/lots/A/stalls/1",
        Some(json!({"bbox": 3})),
        Some(TOKEN),
    )
    .await;
    assert_error(&r, StatusCode::BAD_REQUEST, "invalid_body");
    let r = call(
        &a,
        Method::PUT,
        "/api/lots/A/stalls/abc",
        Some(json!({"bbox": {"x": 0, "y": 0, "w": 1, "h": 1}, "camera_id": "c1"})),
        Some(TOKEN),
    )
    .await;
    assert_error(&r, StatusCode::BAD_REQUEST, "invalid_stall_id");
}

#[tokio::test]
async fn mutations_require_matching_token() {
    let reg = registry();
    let a = app(&reg);
    let body = json!({"bbox": {"x": 0, "y": 0, "w": 5, "h": 5}, "camera_id": "c1"});
    for token in [None, Some("wrong")] {
        let r = call(
            &a,
            Method::PUT,
            "/api/lots/A/stalls/1",
            Some(body.clone()),
            token,
        )
        .await;
        assert_error(&r, StatusCode::UNAUTHORIZED, "unauthorized");
        let r = call(
            &a,
            Method::POST,
            "/api/lots",
            Some(json!({"lot_id": "B"})),
            token,
        )
        .await;
        assert_error(&r, StatusCode::UNAUTHORIZED, "unauthorized");
    }
    assert!(reg.lot_status("A", false).unwrap().is_empty());
    let open = router(AppState {
        registry: Arc::clone(&reg),
        admin_token: None,
    });
    let r = call(
        &open,
        Method::PUT,
        "/api/lots/A/stalls/1",
        Some(body),
        Some("anything"),
    )
    .await;
    assert_error(&r, StatusCode::UNAUTHORIZED, "unauthorized");
}

#[tokio::test]
async fn lots_and_cameras_can_be_created() {
    let reg = registry();
    let a = app(&reg);
    let r = call(
        &a,
        Method::POST,
        "/api/lots",
        Some(json!({"lot_id": "B", "display_name": "Lot B"})),
        Some(TOKEN),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["display_name"], "Lot B");
    let r = call(
        &a,
        Method::POST,
        "/api/cameras",
        Some(
            json!({"camera_id": "b1", "lot_id": "B", "snapshot_url": "http://10.0.0.5/snap.jpg",
                    "username": "u", "password": "secret"}),
        ),
        Some(TOKEN),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["poll_interval_s"], 10.0);
    assert_ne!(r.json()["password"], "secret");
    let lots = get(&a, "/api/lots").await.json();
    assert_eq!(lots.as_array().unwrap().len(), 2);
    assert_eq!(lots[1]["camera_ids"], json!(["b1"]));
    let cams = get(&a, "/api/lots/B/cameras").await.json();
    assert_eq!(cams[0]["camera"]["camera_id"], "b1");

    let r = call(
        &a,
        Method::POST,
        "/api/cameras",
        Some(json!({"camera_id": "z", "lot_id": "Nope", "snapshot_url": "http://h/s"})),
        Some(TOKEN),
    )
    .await;
    assert_error(&r, StatusCode::NOT_FOUND, "lot_not_found");
    let r = call(
        &a,
        Method::POST,
        "/api/cameras",
        Some(json!({"camera_id": "z", "lot_id": "B", "snapshot_url": "http://h/s", "poll_interval_s": 0})),
        Some(TOKEN),
    )
    .await;
    assert_error(&r, StatusCode::UNPROCESSABLE_ENTITY, "invalid_camera");
}

#[tokio::test]
async fn delete_removes_stall_from_listing() {
    let reg = seeded();
    let a = app(&reg);
    let r = call(
        &a,
        Method::DELETE,
        "/api/lots/A/stalls/2",
        None,
        Some(TOKEN),
    )
    .await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    let ids: Vec<u64> = get(&a, "/api/lots/A/stalls")
        .await
        .json()
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["stall_id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, vec![1, 3]);
    let r = call(
        &a,
        Method::DELETE,
        "/api/lots/A/stalls/2",
        None,
        Some(TOKEN),
    )
    .await;
    assert_error(&r, StatusCode::NOT_FOUND, "stall_not_found");
}

#[tokio::test]
async fn unknown_route_uses_error_schema() {
    assert_error(
        &get(&app(&registry()), "/nope").await,
        StatusCode::NOT_FOUND,
        "not_found",
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn frame_is_503_before_poll_and_png_after() {
    let img = RgbImage::from_fn(64, 36, |x, y| Rgb([x as u8 * 4, y as u8 * 7, 50]));
    let stub = StubCamera::start(Behavior::Png(png_bytes(&img))).await;
    let reg = Arc::new(Registry::open_in_memory().unwrap());
    reg.upsert_lot("A", "A").unwrap();
    reg.upsert_camera(&CameraConfig::new("c1", "A", stub.url.clone()))
        .unwrap();
    reg.upsert_stall("A", 1, BBox::new(0, 0, 16, 16), "c1")
        .unwrap();
    let a = app(&reg);

    assert_error(
        &get(&a, "/api/lots/A/cameras/c1/frame").await,
        StatusCode::SERVICE_UNAVAILABLE,
        "no_frame_yet",
    );
    assert_error(
        &get(&a, "/api/lots/A/cameras/zz/frame").await,
        StatusCode::NOT_FOUND,
        "camera_not_found",
    );

    let ing = Ingestor::new(Arc::clone(&reg), Box::new(|_: &RgbImage| 0.3f32));
    ing.ingest_cycle("A").await.unwrap();

    let r = get(&a, "/api/lots/A/cameras/c1/frame").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.content_type.as_deref(), Some("image/png"));
    let decoded = image::load_from_memory(&r.body).unwrap().to_rgb8();
    assert_eq!(decoded, img);
    let at = r.headers.get("X-Captured-At").unwrap().to_str().unwrap();
    assert!(DateTime::parse_from_rfc3339(at).is_ok(), "{at}");

    let s = get(&a, "/api/lots/A/stalls").await.json();
    assert_eq!(s[0]["status"], "vacant");
}

#[tokio::test]
async fn get_endpoints_have_no_side_effects() {
    let reg = seeded();
    let a = app(&reg);
    let before = reg.lot_status("A", true).unwrap();
    for _ in 0..3 {
        get(&a, "/api/lots/A/stalls").await;
        get(&a, "/api/lots/A/summary").await;
        get(&a, "/api/lots").await;
    }
    assert_eq!(reg.lot_status("A", true).unwrap(), before);
}

#[tokio::test(flavor = "multi_thread")]
async fn serves_over_real_socket_with_cors() {
    let reg = seeded();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(stallwatch_service::web::serve(
        AppState {
            registry: reg,
            admin_token: Some(TOKEN.into()),
        },
        listener,
        async {
            let _ = rx.await;
        },
    ));
    let client = reqwest::Client::new();
    let resp = client
        .get(format!("http://{addr}/api/lots/A/summary"))
        .header("Origin", "http://localhost:5173")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    assert!(resp.headers().contains_key("access-control-allow-origin"));
    let v: Value = serde_json::from_slice(&resp.bytes().await.unwrap()).unwrap();
    assert_eq!(v, json!({"free": 1, "total": 3, "unknown": 1}));
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}
