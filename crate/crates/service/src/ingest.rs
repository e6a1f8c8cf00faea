//! Camera polling: fetch snapshots, crop stall regions, classify them and
//! write the results to the registry.

use std::collections::HashMap;
use std::io::Cursor;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use image::{ImageFormat, RgbImage};
use stallwatch_core::detector::Model;
use thiserror::Error;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::camera::{BBox, CameraConfig};
use crate::registry::{Observation, Registry, RegistryError, StoredFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FetchError {
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("camera answered HTTP {0}")]
    Status(u16),
    #[error("undecodable snapshot: {0}")]
    Decode(String),
    #[error("request failed: {0}")]
    Transport(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CropError {
    #[error("bbox {bbox:?} does not intersect the {width}x{height} frame")]
    OutsideFrame { bbox: BBox, width: u32, height: u32 },
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("lot {0:?} has no cameras")]
    NoCameras(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("detector failed: {0}")]
    Detector(String),
}

/// One decoded snapshot.
#[derive(Clone, Debug)]
pub struct Frame {
    pub camera_id: String,
    pub captured_at: DateTime<Utc>,
    pub image: RgbImage,
}

/// Anything that scores a stall crop with an occupied probability in `[0, 1]`.
pub trait Detector: Send {
    fn occupied_prob(&mut self, crop: &RgbImage) -> Result<f32, String>;
}

impl Detector for Model {
    fn occupied_prob(&mut self, crop: &RgbImage) -> Result<f32, String> {
        self.predict_image(crop)
            .map(|p| p.occupied_prob)
            .map_err(|e| e.to_string())
    }
}

impl<F> Detector for F
where
    F: FnMut(&RgbImage) -> f32 + Send,
{
    fn occupied_prob(&mut self, crop: &RgbImage) -> Result<f32, String> {
        Ok(self(crop))
    }
}

pub fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .user_agent(concat!("stallwatch/", env!("CARGO_PKG_VERSION")))
        .build()
        .expect("TLS backend available")
}

/// GETs the camera snapshot and decodes it as PNG or JPEG.
pub async fn fetch_snapshot(
    client: &reqwest::Client,
    cam: &CameraConfig,
) -> Result<Frame, FetchError> {
    let timeout = cam.timeout();
    let mut req = client
        .get(cam.snapshot_url.clone())
        .header(reqwest::header::ACCEPT, "image/jpeg, image/png");
    if let Some(user) = &cam.username {
        req = req.basic_auth(user, cam.password.as_deref());
    }
    let body = tokio::time::timeout(timeout, async {
        let resp = req.send().await.map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(FetchError::Status(status.as_u16()));
        }
        resp.bytes().await.map_err(transport)
    })
    .await
    .map_err(|_| FetchError::Timeout(timeout))??;
    let captured_at = Utc::now();
    let format = image::guess_format(&body).map_err(|e| FetchError::Decode(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(FetchError::Decode(format!(
            "unsupported image format {format:?}"
        )));
    }
    let image = image::load_from_memory_with_format(&body, format)
        .map_err(|e| FetchError::Decode(e.to_string()))?
        .to_rgb8();
    if image.width() == 0 || image.height() == 0 {
        return Err(FetchError::Decode("empty image".into()));
    }
    Ok(Frame {
        camera_id: cam.camera_id.clone(),
        captured_at,
        image,
    })
}

fn transport(e: reqwest::Error) -> FetchError {
    if e.is_timeout() {
        FetchError::Timeout(Duration::ZERO)
    } else {
        FetchError::Transport(e.to_string())
    }
}

/// Cuts the bbox out of the image. A bbox overhanging the frame is clamped
/// to it and a warning logged.
pub fn crop(image: &RgbImage, bbox: BBox) -> Result<RgbImage, CropError> {
    let (fw, fh) = image.dimensions();
    let x1 = bbox.x.saturating_add(bbox.w).min(fw);
    let y1 = bbox.y.saturating_add(bbox.h).min(fh);
    if bbox.x >= x1 || bbox.y >= y1 {
        return Err(CropError::OutsideFrame {
            bbox,
            width: fw,
            height: fh,
        });
    }
    let (w, h) = (x1 - bbox.x, y1 - bbox.y);
    if w != bbox.w || h != bbox.h {
        tracing::warn!(
            ?bbox,
            frame_w = fw,
            frame_h = fh,
            "bbox overhangs frame; clamped to {w}x{h}"
        );
    }
    Ok(image::imageops::crop_imm(image, bbox.x, bbox.y, w, h).to_image())
}

pub fn encode_png(image: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    image
        .write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding to memory cannot fail");
    out.into_inner()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub stalls_updated: usize,
    pub failures: usize,
}

impl std::ops::AddAssign for IngestStats {
    fn add_assign(&mut self, o: IngestStats) {
        self.stalls_updated += o.stalls_updated;
        self.failures += o.failures;
    }
}

/// Shared ingestion state: registry, HTTP client and the single detector
/// instance all cameras take turns on.
pub struct Ingestor {
    registry: Arc<Registry>,
    detector: Arc<Mutex<Box<dyn Detector>>>,
    client: reqwest::Client,
    polls: Mutex<HashMap<String, usize>>,
}

impl Ingestor {
    pub fn new(registry: Arc<Registry>, detector: Box<dyn Detector>) -> Ingestor {
        Ingestor {
            registry,
            detector: Arc::new(Mutex::new(detector)),
            client: http_client(),
            polls: Mutex::new(HashMap::new()),
        }
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    /// Number of poll attempts made per camera since start.
    pub fn poll_counts(&self) -> HashMap<String, usize> {
        self.polls.lock().unwrap().clone()
    }

    pub async fn ingest_cycle(&self, lot_id: &str) -> Result<IngestStats, IngestError> {
        self.ingest_cycle_at(lot_id, Utc::now()).await
    }

    /// One pass over every camera of the lot. `now` is the reference time
    /// for observation timestamps and the staleness check.
    pub async fn ingest_cycle_at(
        &self,
        lot_id: &str,
        now: DateTime<Utc>,
    ) -> Result<IngestStats, IngestError> {
        let cameras = self.registry.cameras_for_lot(lot_id)?;
        if cameras.is_empty() {
            return Err(IngestError::NoCameras(lot_id.to_string()));
        }
        let mut stats = IngestStats::default();
        for cam in &cameras {
            stats += self.poll_camera_at(cam, now).await?;
        }
        Ok(stats)
    }

    /// Fetch, classify and persist one camera, then apply the staleness
    /// rule to its stalls. A failed fetch touches nothing but the health
    /// record and staleness.
    pub async fn poll_camera_at(
        &self,
        cam: &CameraConfig,
        now: DateTime<Utc>,
    ) -> Result<IngestStats, IngestError> {
        *self
            .polls
            .lock()
            .unwrap()
            .entry(cam.camera_id.clone())
            .or_default() += 1;
        let mut stats = IngestStats::default();
        match fetch_snapshot(&self.client, cam).await {
            Ok(frame) => match self.process_frame(cam, frame, now).await {
                Ok(n) => {
                    stats.stalls_updated = n;
                    self.registry.record_camera_success(&cam.camera_id, now)?;
                }
                Err(e) => {
                    tracing::warn!(camera = %cam.camera_id, "ingest failed: {e}");
                    self.registry
                        .record_camera_failure(&cam.camera_id, &e.to_string(), now)?;
                    stats.failures = 1;
                }
            },
            Err(e) => {
                tracing::warn!(camera = %cam.camera_id, "snapshot fetch failed: {e}");
                self.registry
                    .record_camera_failure(&cam.camera_id, &e.to_string(), now)?;
                stats.failures = 1;
            }
        }
        let stale_after =
            chrono::Duration::from_std(cam.stale_after()).unwrap_or(chrono::Duration::MAX);
        let cutoff = now
            .checked_sub_signed(stale_after)
            .unwrap_or(DateTime::<Utc>::MIN_UTC);
        let staled = self.registry.mark_stale(&cam.camera_id, cutoff, now)?;
        if staled > 0 {
            tracing::info!(camera = %cam.camera_id, stalls = staled, "stalls marked unknown after missed polls");
        }
        Ok(stats)
    }

    async fn process_frame(
        &self,
        cam: &CameraConfig,
        frame: Frame,
        now: DateTime<Utc>,
    ) -> Result<usize, IngestError> {
        let stalls = self.registry.stalls_for_camera(&cam.camera_id)?;
        let detector = Arc::clone(&self.detector);
        let camera_id = cam.camera_id.clone();
        let (frame_png, observations) = tokio::task::spawn_blocking(move || {
            let png = encode_png(&frame.image);
            let mut det = detector.lock().unwrap_or_else(|p| p.into_inner());
            let mut obs = Vec::with_capacity(stalls.len());
            for s in &stalls {
                let c = match crop(&frame.image, s.bbox) {
                    Ok(c) => c,
                    Err(e) => {
                        tracing::warn!(camera = %camera_id, stall = s.stall_id, "{e}");
                        continue;
                    }
                };
                let prob = det.occupied_prob(&c).map_err(IngestError::Detector)?;
                obs.push(Observation {
                    lot_id: s.lot_id.clone(),
                    stall_id: s.stall_id,
                    blob: encode_png(&c),
                    occupied_prob: prob,
                    observed_at: now,
                });
            }
            Ok::<_, IngestError>((
                StoredFrame {
                    camera_id: frame.camera_id,
                    png,
                    width: frame.image.width(),
                    height: frame.image.height(),
                    captured_at: frame.captured_at,
                },
                obs,
            ))
        })
        .await
        .map_err(|e| IngestError::Detector(format!("inference task failed: {e}")))??;
        self.registry.store_frame(&frame_png)?;
        self.registry.record_observations(&observations)?;
        Ok(observations.len())
    }
}

/// Handle used to stop a running scheduler.
#[derive(Clone)]
pub struct Shutdown(watch::Sender<bool>);

impl Shutdown {
    pub fn new() -> (Shutdown, watch::Receiver<bool>) {
        let (tx, rx) = watch::channel(false);
        (Shutdown(tx), rx)
    }

    pub fn trigger(&self) {
        let _ = self.0.send(true);
    }
}

async fn stopped(rx: &mut watch::Receiver<bool>) {
    while !*rx.borrow_and_update() {
        if rx.changed().await.is_err() {
            return;
        }
    }
}

/// Polls one camera on its own cadence until shutdown. A cycle in flight
/// when shutdown arrives runs to completion.
fn spawn_camera_task(
    ingestor: Arc<Ingestor>,
    cam: CameraConfig,
    mut shutdown: watch::Receiver<bool>,
) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(cam.poll_interval());
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                biased;
                _ = stopped(&mut shutdown) => break,
                _ = ticker.tick() => {}
            }
            if let Err(e) = ingestor.poll_camera_at(&cam, Utc::now()).await {
                tracing::error!(camera = %cam.camera_id, "poll failed: {e}");
            }
        }
        tracing::debug!(camera = %cam.camera_id, "poller stopped");
    })
}

/// Runs one poller per camera until `shutdown` fires, then waits for the
/// pollers to finish their current cycle.
pub async fn run_scheduler(
    ingestor: Arc<Ingestor>,
    cameras: Vec<CameraConfig>,
    shutdown: watch::Receiver<bool>,
) {
    let tasks: Vec<_> = cameras
        .into_iter()
        .map(|c| spawn_camera_task(Arc::clone(&ingestor), c, shutdown.clone()))
        .collect();
    for t in tasks {
        let _ = t.await;
    }
}

/// Like [`run_scheduler`] but takes the camera list from the registry and
/// re-reads it every `refresh`, so cameras added or edited through the API
/// are picked up without a restart.
pub async fn run_registry_scheduler(
    ingestor: Arc<Ingestor>,
    refresh: Duration,
    mut shutdown: watch::Receiver<bool>,
) {
    let mut running: HashMap<String, (CameraConfig, watch::Sender<bool>, JoinHandle<()>)> =
        HashMap::new();
    let mut ticker = tokio::time::interval(refresh);
    loop {
        tokio::select! {
            biased;
            _ = stopped(&mut shutdown) => break,
            _ = ticker.tick() => {}
        }
        let cameras = match ingestor.registry().list_cameras() {
            Ok(c) => c,
            Err(e) => {
                tracing::error!("cannot list cameras: {e}");
                continue;
            }
        };
        let wanted: HashMap<String, CameraConfig> = cameras
            .into_iter()
            .map(|c| (c.camera_id.clone(), c))
            .collect();
        let gone: Vec<String> = running
            .iter()
            .filter(|(id, (cfg, _, _))| wanted.get(*id) != Some(cfg))
            .map(|(id, _)| id.clone())
            .collect();
        for id in gone {
            if let Some((_, stop, handle)) = running.remove(&id) {
                let _ = stop.send(true);
                let _ = handle.await;
            }
        }
        for (id, cfg) in wanted {
            if let std::collections::hash_map::Entry::Vacant(slot) = running.entry(id) {
                tracing::info!(camera = %slot.key(), "starting poller");
                let (stop, rx) = watch::channel(false);
                let handle = spawn_camera_task(Arc::clone(&ingestor), cfg.clone(), rx);
                slot.insert((cfg, stop, handle));
            }
        }
    }
    for (_, (_, stop, handle)) in running {
        let _ = stop.send(true);
        let _ = handle.await;
    }
}
