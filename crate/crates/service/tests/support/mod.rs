//! Stub IP camera: an HTTP server on an ephemeral port whose snapshot
//! response can be switched at runtime.

#![allow(dead_code)]

use std::io::Cursor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use url::Url;

#[derive(Clone)]
pub enum Behavior {
    Png(Vec<u8>),
    Status(u16),
    Delay(Duration, Vec<u8>),
    Garbage,
}

struct StubState {
    behavior: Mutex<Behavior>,
    hits: AtomicUsize,
    credentials: Option<(String, String)>,
}

pub struct StubCamera {
    pub url: Url,
    state: Arc<StubState>,
    server: tokio::task::JoinHandle<()>,
}

pub fn png_bytes(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

async fn snapshot(State(state): State<Arc<StubState>>, headers: HeaderMap) -> Response {
    state.hits.fetch_add(1, Ordering::SeqCst);
    if let Some((u, p)) = &state.credentials {
        let expected = format!(
            "Basic {}",
            base64::engine::general_purpose::STANDARD.encode(format!("{u}:{p}"))
        );
        let got = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok());
        if got != Some(expected.as_str()) {
            return StatusCode::UNAUTHORIZED.into_response();
        }
    }
    let behavior = state.behavior.lock().unwrap().clone();
    match behavior {
        Behavior::Png(body) => ([(header::CONTENT_TYPE, "image/png")], body).into_response(),
        Behavior::Status(code) => StatusCode::from_u16(code).unwrap().into_response(),
        Behavior::Delay(d, body) => {
            tokio::time::sleep(d).await;
            ([(header::CONTENT_TYPE, "image/png")], body).into_response()
        }
        Behavior::Garbage => (
            [(header::CONTENT_TYPE, "image/png")],
            b"definitely not a png".to_vec(),
        )
            .into_response(),
    }
}

impl StubCamera {
    pub async fn start(behavior: Behavior) -> StubCamera {
        StubCamera::start_with_auth(behavior, None).await
    }

    pub async fn start_with_auth(
        behavior: Behavior,
        credentials: Option<(&str, &str)>,
    ) -> StubCamera {
        let state = Arc::new(StubState {
            behavior: Mutex::new(behavior),
            hits: AtomicUsize::new(0),
            credentials: credentials.map(|(u, p)| (u.to_string(), p.to_string())),
        });
        let app = Router::new()
            .route("/snapshot", get(snapshot))
            .with_state(Arc::clone(&state));
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let server = tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        StubCamera {
            url: Url::parse(&format!("http://{addr}/snapshot")).unwrap(),
            state,
            server,
        }
    }

    pub fn set(&self, behavior: Behavior) {
        *self.state.behavior.lock().unwrap() = behavior;
    }

    pub fn hits(&self) -> usize {
        self.state.hits.load(Ordering::SeqCst)
    }
}

impl Drop for StubCamera {
    fn drop(&mut self) {
        self.server.abort();
    }
}
