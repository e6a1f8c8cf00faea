//! TOML configuration shared by `serve` and `ingest`.
//!
//! ```toml
//! [server]
//! data_dir = "./data"
//! admin_token = "change-me"
//! model = "model.psvi"
//! listen = "127.0.0.1:8080"
//!
//! [[lots]]
//! lot_id = "PUC"
//! display_name = "PUC main lot"
//!
//! [[cameras]]
//! camera_id = "puc-north"
//! lot_id = "PUC"
//! snapshot_url = "http://10.0.0.21/snapshot.jpg"
//! poll_interval_s = 10
//!
//! [[stalls]]
//! lot_id = "PUC"
//! stall_id = 1
//! camera_id = "puc-north"
//! bbox = { x = 40, y = 120, w = 64, h = 48 }
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{BBox, CameraConfig};
use crate::registry::{Registry, RegistryError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    /// Shared secret expected in `X-Admin-Token` on mutating requests.
    pub admin_token: Option<String>,
    /// Detector model file used by ingestion.
    pub model: Option<PathBuf>,
    pub listen: Option<SocketAddr>,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            data_dir: default_data_dir(),
            admin_token: None,
            model: None,
            listen: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LotConfig {
    pub lot_id: String,
    pub display_name: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StallConfig {
    pub lot_id: String,
    pub stall_id: u32,
    pub camera_id: String,
    pub bbox: BBox,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub server: ServerConfig,
    #[serde(default)]
    pub lots: Vec<LotConfig>,
    #[serde(default)]
    pub cameras: Vec<CameraConfig>,
    #[serde(default)]
    pub stalls: Vec<StallConfig>,
}

impl Config {
    /// Reads the file; relative `data_dir` and `model` paths are resolved
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Config::parse(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.server.data_dir.is_relative() {
            cfg.server.data_dir = base.join(&cfg.server.data_dir);
        }
        if let Some(m) = cfg.server.model.as_mut().filter(|m| m.is_relative()) {
            *m = base.join(&*m);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Config, String> {
        let cfg: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        for cam in &self.cameras {
            cam.validate()
                .map_err(|e| format!("camera {:?}: {e}", cam.camera_id))?;
        }
        for s in &self.stalls {
            s.bbox
                .validate()
                .map_err(|e| format!("stall {}/{}: {e}", s.lot_id, s.stall_id))?;
        }
        Ok(())
    }

    /// Writes lots, cameras and stalls into the registry. Existing stalls
    /// keep their status unless their bbox changed.
    pub fn apply(&self, registry: &Registry) -> Result<(), ConfigError> {
        for lot in &self.lots {
            registry.upsert_lot(
                &lot.lot_id,
                lot.display_name.as_deref().unwrap_or(&lot.lot_id),
            )?;
        }
        for cam in &self.cameras {
            registry.upsert_camera(cam)?;
        }
        for s in &self.stalls {
            registry.upsert_stall(&s.lot_id, s.stall_id, s.bbox, &s.camera_id)?;
        }
        Ok(())
    }
}
