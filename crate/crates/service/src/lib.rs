//! Parking-stall occupancy service: stall registry, camera ingestion and
//! the HTTP API.

pub mod camera;
pub mod config;
pub mod ingest;
pub mod registry;
pub mod web;

pub use camera::{BBox, CameraConfig};
pub use config::Config;
pub use ingest::{Detector, IngestStats, Ingestor};
pub use registry::{Registry, StallStatus, Summary};
