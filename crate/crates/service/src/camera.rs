use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

pub const DEFAULT_POLL_INTERVAL_S: f64 = 10.0;
pub const DEFAULT_TIMEOUT_S: f64 = 5.0;

/// Stall rectangle in camera-image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BBox { x, y, w, h }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.w == 0 || self.h == 0 {
            return Err(format!(
                "bbox must have positive size, got {}x{}",
                self.w, self.h
            ));
        }
        if self.x.checked_add(self.w).is_none() || self.y.checked_add(self.h).is_none() {
            return Err("bbox extends past the coordinate range".into());
        }
        Ok(())
    }
}

/// Snapshot source for one IP camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub camera_id: String,
    pub lot_id: String,
    pub snapshot_url: Url,
    #[serde(default = "default_interval")]
    pub poll_interval_s: f64,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub username: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub password: Option<String>,
}

fn default_interval() -> f64 {
    DEFAULT_POLL_INTERVAL_S
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}

impl CameraConfig {
    pub fn new(camera_id: impl Into<String>, lot_id: impl Into<String>, snapshot_url: Url) -> Self {
        CameraConfig {
            camera_id: camera_id.into(),
            lot_id: lot_id.into(),
            snapshot_url,
            poll_interval_s: DEFAULT_POLL_INTERVAL_S,
            timeout_s: DEFAULT_TIMEOUT_S,
            username: None,
            password: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.camera_id.trim().is_empty() {
            return Err("camera_id must not be empty".into());
        }
        if self.lot_id.trim().is_empty() {
            return Err("lot_id must not be empty".into());
        }
        if !matches!(self.snapshot_url.scheme(), "http" | "https") {
            return Err(format!(
                "snapshot_url must be http(s), got {}",
                self.snapshot_url
            ));
        }
        for (name, v) in [
            ("poll_interval_s", self.poll_interval_s),
            ("timeout_s", self.timeout_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.password.is_some() && self.username.is_none() {
            return Err("password given without username".into());
        }
        Ok(())
    }

    pub fn poll_interval(&self) -> Duration {
        Duration::from_secs_f64(self.poll_interval_s)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }

    /// Time without a successful observation after which stalls turn unknown.
    pub fn stale_after(&self) -> Duration {
        self.poll_interval() * 3
    }

    /// Copy safe to hand out over the API.
    pub fn redacted(&self) -> CameraConfig {
        CameraConfig {
            password: self.password.as_ref().map(|_| "***".to_string()),
            ..self.clone()
        }
    }
}
