//! Durable store of lots, cameras, stalls and their latest observations,
//! backed by a single SQLite file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, SecondsFormat, Utc};
use rusqlite::{params, Connection, OptionalExtension, Row, Transaction};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::camera::{BBox, CameraConfig};

pub const DB_FILE_NAME: &str = "stallwatch.sqlite3";

/// Forward migrations; entry `i` upgrades the schema from version `i` to `i + 1`.
const MIGRATIONS: &[&str] = &[
    "CREATE TABLE lots (
        lot_id TEXT PRIMARY KEY,
        display_name TEXT NOT NULL
    );
    CREATE TABLE cameras (
        camera_id TEXT PRIMARY KEY,
        lot_id TEXT NOT NULL REFERENCES lots(lot_id),
        snapshot_url TEXT NOT NULL,
        poll_interval_s REAL NOT NULL,
        timeout_s REAL NOT NULL,
        username TEXT,
        password TEXT
    );
    CREATE TABLE stalls (
        lot_id TEXT NOT NULL REFERENCES lots(lot_id),
        stall_id INTEGER NOT NULL,
        x INTEGER NOT NULL,
        y INTEGER NOT NULL,
        w INTEGER NOT NULL,
        h INTEGER NOT NULL,
        camera_id TEXT NOT NULL,
        blob BLOB NOT NULL DEFAULT x'',
        status TEXT NOT NULL DEFAULT 'unknown',
        updated_at TEXT NOT NULL,
        observed_at TEXT,
        PRIMARY KEY (lot_id, stall_id)
    );
    CREATE INDEX stalls_by_camera ON stalls(camera_id);",
    "CREATE TABLE frames (
        camera_id TEXT PRIMARY KEY,
        png BLOB NOT NULL,
        width INTEGER NOT NULL,
        height INTEGER NOT NULL,
        captured_at TEXT NOT NULL
    );
    ALTER TABLE cameras ADD COLUMN last_success_at TEXT;
    ALTER TABLE cameras ADD COLUMN last_error TEXT;
    ALTER TABLE cameras ADD COLUMN last_error_at TEXT;
    ALTER TABLE cameras ADD COLUMN consecutive_failures INTEGER NOT NULL DEFAULT 0;",
];

pub const SCHEMA_VERSION: u32 = MIGRATIONS.len() as u32;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("lot {0:?} not found")]
    LotNotFound(String),
    #[error("stall {stall_id} not found in lot {lot_id:?}")]
    StallNotFound { lot_id: String, stall_id: u32 },
    #[error("camera {0:?} not found")]
    CameraNotFound(String),
    #[error("invalid bbox: {0}")]
    InvalidBbox(String),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("cannot create data directory {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("database error: {0}")]
    Db(#[from] rusqlite::Error),
    #[error("database schema version {found} is newer than supported {supported}")]
    SchemaTooNew { found: u32, supported: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StallStatus {
    Vacant,
    Occupied,
    Unknown,
}

impl StallStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StallStatus::Vacant => "vacant",
            StallStatus::Occupied => "occupied",
            StallStatus::Unknown => "unknown",
        }
    }

    /// Occupied iff `occupied_prob >= 0.5`.
    pub fn from_prob(occupied_prob: f32) -> StallStatus {
        if occupied_prob >= 0.5 {
            StallStatus::Occupied
        } else {
            StallStatus::Vacant
        }
    }
}

impl fmt::Display for StallStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StallStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vacant" => Ok(StallStatus::Vacant),
            "occupied" => Ok(StallStatus::Occupied),
            "unknown" => Ok(StallStatus::Unknown),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StallRecord {
    pub lot_id: String,
    pub stall_id: u32,
    pub bbox: BBox,
    pub camera_id: String,
    /// PNG of the latest crop; empty before the first observation or when
    /// blobs were not requested.
    #[serde(skip)]
    pub blob: Vec<u8>,
    pub status: StallStatus,
    pub updated_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LotRecord {
    pub lot_id: String,
    pub display_name: String,
    pub camera_ids: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub free: u32,
    pub total: u32,
    pub unknown: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredFrame {
    pub camera_id: String,
    pub png: Vec<u8>,
    pub width: u32,
    pub height: u32,
    pub captured_at: DateTime<Utc>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CameraHealth {
    pub last_success_at: Option<DateTime<Utc>>,
    pub last_error: Option<String>,
    pub last_error_at: Option<DateTime<Utc>>,
    pub consecutive_failures: u32,
}

/// One classified crop to persist.
#[derive(Clone, Debug)]
pub struct Observation {
    pub lot_id: String,
    pub stall_id: u32,
    pub blob: Vec<u8>,
    pub occupied_prob: f32,
    pub observed_at: DateTime<Utc>,
}

fn ts(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

fn parse_ts(s: &str) -> rusqlite::Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| {
            rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e))
        })
}

fn parse_opt_ts(s: Option<String>) -> rusqlite::Result<Option<DateTime<Utc>>> {
    s.as_deref().map(parse_ts).transpose()
}

const STALL_COLUMNS: &str = "lot_id, stall_id, x, y, w, h, camera_id, status, updated_at";

fn stall_from_row(row: &Row<'_>) -> rusqlite::Result<StallRecord> {
    let status: String = row.get(7)?;
    let updated_at: String = row.get(8)?;
    Ok(StallRecord {
        lot_id: row.get(0)?,
        stall_id: row.get(1)?,
        bbox: BBox {
            x: row.get(2)?,
            y: row.get(3)?,
            w: row.get(4)?,
            h: row.get(5)?,
        },
        camera_id: row.get(6)?,
        blob: Vec::new(),
        status: status.parse().map_err(|e: String| {
            rusqlite::Error::FromSqlConversionFailure(7, rusqlite::types::Type::Text, e.into())
        })?,
        updated_at: parse_ts(&updated_at)?,
    })
}

fn camera_from_row(row: &Row<'_>) -> rusqlite::Result<CameraConfig> {
    let url: String = row.get(2)?;
    Ok(CameraConfig {
        camera_id: row.get(0)?,
        lot_id: row.get(1)?,
        snapshot_url: Url::parse(&url).map_err(|e| {
            rusqlite::Error::FromSqlConversionFailure(2, rusqlite::types::Type::Text, Box::new(e))
        })?,
        poll_interval_s: row.get(3)?,
        timeout_s: row.get(4)?,
        username: row.get(5)?,
        password: row.get(6)?,
    })
}

const CAMERA_COLUMNS: &str =
    "camera_id, lot_id, snapshot_url, poll_interval_s, timeout_s, username, password";

/// Thread-safe handle to the registry database. All access goes through one
/// connection, so every call observes a consistent snapshot.
pub struct Registry {
    conn: Mutex<Connection>,
    path: Option<PathBuf>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("path", &self.path)
            .finish()
    }
}

impl Registry {
    /// Opens or creates `<data_dir>/stallwatch.sqlite3`.
    pub fn open_dir(data_dir: impl AsRef<Path>) -> Result<Registry, RegistryError> {
        let dir = data_dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| RegistryError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Registry::open(dir.join(DB_FILE_NAME))
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Registry, RegistryError> {
        let conn = Connection::open(path.as_ref())?;
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        Registry::init(conn, Some(path.as_ref().to_path_buf()))
    }

    pub fn open_in_memory() -> Result<Registry, RegistryError> {
        Registry::init(Connection::open_in_memory()?, None)
    }

    fn init(mut conn: Connection, path: Option<PathBuf>) -> Result<Registry, RegistryError> {
        conn.pragma_update(None, "foreign_keys", "ON")?;
        migrate(&mut conn)?;
        Ok(Registry {
            conn: Mutex::new(conn),
            path,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn conn(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn schema_version(&self) -> Result<u32, RegistryError> {
        Ok(current_version(&self.conn())?)
    }

    // ---- lots ----

    /// Creates the lot or updates its display name.
    pub fn upsert_lot(&self, lot_id: &str, display_name: &str) -> Result<LotRecord, RegistryError> {
        if lot_id.trim().is_empty() {
            return Err(RegistryError::Invalid("lot_id must not be empty".into()));
        }
        let conn = self.conn();
        conn.execute(
            "INSERT INTO lots (lot_id, display_name) VALUES (?1, ?2)
             ON CONFLICT(lot_id) DO UPDATE SET display_name = excluded.display_name",
            params![lot_id, display_name],
        )?;
        lot_record(&conn, lot_id)
    }

    pub fn get_lot(&self, lot_id: &str) -> Result<LotRecord, RegistryError> {
        lot_record(&self.conn(), lot_id)
    }

    pub fn list_lots(&self) -> Result<Vec<LotRecord>, RegistryError> {
        let conn = self.conn();
        let ids: Vec<String> = conn
            .prepare("SELECT lot_id FROM lots ORDER BY lot_id")?
            .query_map([], |r| r.get(0))?
            .collect::<Result<_, _>>()?;
        ids.iter().map(|id| lot_record(&conn, id)).collect()
    }

    // ---- cameras ----

    pub fn upsert_camera(&self, cam: &CameraConfig) -> Result<CameraConfig, RegistryError> {
        cam.validate().map_err(RegistryError::Invalid)?;
        let conn = self.conn();
        ensure_lot(&conn, &cam.lot_id)?;
        conn.execute(
            "INSERT INTO cameras (camera_id, lot_id, snapshot_url, poll_interval_s, timeout_s, username, password)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)
             ON CONFLICT(camera_id) DO UPDATE SET lot_id = excluded.lot_id,
                snapshot_url = excluded.snapshot_url, poll_interval_s = excluded.poll_interval_s,
                timeout_s = excluded.timeout_s, username = excluded.username, password = excluded.password",
            params![
                cam.camera_id,
                cam.lot_id,
                cam.snapshot_url.as_str(),
                cam.poll_interval_s,
                cam.timeout_s,
                cam.username,
                cam.password
            ],
        )?;
        Ok(cam.clone())
    }

    pub fn get_camera(&self, camera_id: &str) -> Result<CameraConfig, RegistryError> {
        self.conn()
            .query_row(
                &format!("SELECT {CAMERA_COLUMNS} FROM cameras WHERE camera_id = ?1"),
                [camera_id],
                camera_from_row,
            )
            .optional()?
            .ok_or_else(|| RegistryError::CameraNotFound(camera_id.to_string()))
    }

    pub fn list_cameras(&self) -> Result<Vec<CameraConfig>, RegistryError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(&format!(
            "SELECT {CAMERA_COLUMNS} FROM cameras ORDER BY camera_id"
        ))?;
        let cams = stmt
            .query_map([], camera_from_row)?
            .collect::<Result<_, _>>()?;
        Ok(cams)
    }

    pub fn cameras_for_lot(&self, lot_id: &str) -> Result<Vec<CameraConfig>, RegistryError> {
        let conn = self.conn();
        ensure_lot(&conn, lot_id)?;
        let mut stmt = conn.prepare(&format!(
            "SELECT {CAMERA_COLUMNS} FROM cameras WHERE lot_id = ?1 ORDER BY camera_id"
        ))?;
        let cams = stmt
            .query_map([lot_id], camera_from_row)?
            .collect::<Result<_, _>>()?;
        Ok(cams)
    }

    pub fn record_camera_success(
        &self,
        camera_id: &str,
        at: DateTime<Utc>,
    ) -> Result<(), RegistryError> {
        let n = self.conn().execute(
            "UPDATE cameras SET last_success_at = ?2, consecutive_failures = 0 WHERE camera_id = ?1",
            params![camera_id, ts(at)],
        )?;
        found(n, || RegistryError::CameraNotFound(camera_id.to_string()))
    }

    pub fn record_camera_failure(
        &self,
        camera_id: &str,
        error: &str,
        at: DateTime<Utc>,
    ) -> Result<(), RegistryError> {
        let n = self.conn().execute(
            "UPDATE cameras SET last_error = ?2, last_error_at = ?3,
                consecutive_failures = consecutive_failures + 1 WHERE camera_id = ?1",
            params![camera_id, error, ts(at)],
        )?;
        found(n, || RegistryError::CameraNotFound(camera_id.to_string()))
    }

    pub fn camera_health(&self, camera_id: &str) -> Result<CameraHealth, RegistryError> {
        self.conn()
            .query_row(
                "SELECT last_success_at, last_error, last_error_at, consecutive_failures
                 FROM cameras WHERE camera_id = ?1",
                [camera_id],
                |r| {
                    Ok(CameraHealth {
                        last_success_at: parse_opt_ts(r.get(0)?)?,
                        last_error: r.get(1)?,
                        last_error_at: parse_opt_ts(r.get(2)?)?,
                        consecutive_failures: r.get(3)?,
                    })
                },
            )
            .optional()?
            .ok_or_else(|| RegistryError::CameraNotFound(camera_id.to_string()))
    }

    // ---- stalls ----

    /// Creates the stall or rebinds it. Changing the bbox resets the status
    /// to unknown and drops the stored crop.
    pub fn upsert_stall(
        &self,
        lot_id: &str,
        stall_id: u32,
        bbox: BBox,
        camera_id: &str,
    ) -> Result<StallRecord, RegistryError> {
        self.upsert_stall_at(lot_id, stall_id, bbox, camera_id, Utc::now())
    }

    pub fn upsert_stall_at(
        &self,
        lot_id: &str,
        stall_id: u32,
        bbox: BBox,
        camera_id: &str,
        now: DateTime<Utc>,
    ) -> Result<StallRecord, RegistryError> {
        bbox.validate().map_err(RegistryError::InvalidBbox)?;
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        ensure_lot(&tx, lot_id)?;
        let cam_lot: Option<String> = tx
            .query_row(
                "SELECT lot_id FROM cameras WHERE camera_id = ?1",
                [camera_id],
                |r| r.get(0),
            )
            .optional()?;
        if cam_lot.as_deref() != Some(lot_id) {
            return Err(RegistryError::CameraNotFound(camera_id.to_string()));
        }
        let existing = stall_row(&tx, lot_id, stall_id)?;
        match existing {
            None => {
                tx.execute(
                    "INSERT INTO stalls (lot_id, stall_id, x, y, w, h, camera_id, status, updated_at)
                     VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, 'unknown', ?8)",
                    params![lot_id, stall_id, bbox.x, bbox.y, bbox.w, bbox.h, camera_id, ts(now)],
                )?;
            }
            Some(old) if old.bbox != bbox => {
                tx.execute(
                    "UPDATE stalls SET x = ?3, y = ?4, w = ?5, h = ?6, camera_id = ?7, status = 'unknown',
                        blob = x'', observed_at = NULL, updated_at = ?8
                     WHERE lot_id = ?1 AND stall_id = ?2",
                    params![lot_id, stall_id, bbox.x, bbox.y, bbox.w, bbox.h, camera_id, ts(now)],
                )?;
            }
            Some(old) if old.camera_id != camera_id => {
                tx.execute(
                    "UPDATE stalls SET camera_id = ?3, status = 'unknown', blob = x'', observed_at = NULL,
                        updated_at = ?4
                     WHERE lot_id = ?1 AND stall_id = ?2",
                    params![lot_id, stall_id, camera_id, ts(now)],
                )?;
            }
            Some(_) => {}
        }
        let rec = stall_row(&tx, lot_id, stall_id)?.expect("row just written");
        tx.commit()?;
        Ok(rec)
    }

    pub fn delete_stall(&self, lot_id: &str, stall_id: u32) -> Result<(), RegistryError> {
        let conn = self.conn();
        ensure_lot(&conn, lot_id)?;
        let n = conn.execute(
            "DELETE FROM stalls WHERE lot_id = ?1 AND stall_id = ?2",
            params![lot_id, stall_id],
        )?;
        found(n, || RegistryError::StallNotFound {
            lot_id: lot_id.to_string(),
            stall_id,
        })
    }

    pub fn get_stall(
        &self,
        lot_id: &str,
        stall_id: u32,
        include_blob: bool,
    ) -> Result<StallRecord, RegistryError> {
        let conn = self.conn();
        ensure_lot(&conn, lot_id)?;
        let mut rec =
            stall_row(&conn, lot_id, stall_id)?.ok_or_else(|| RegistryError::StallNotFound {
                lot_id: lot_id.to_string(),
                stall_id,
            })?;
        if include_blob {
            rec.blob = conn.query_row(
                "SELECT blob FROM stalls WHERE lot_id = ?1 AND stall_id = ?2",
                params![lot_id, stall_id],
                |r| r.get(0),
            )?;
        }
        Ok(rec)
    }

    /// Stalls bound to one camera, ordered by lot and stall id, without blobs.
    pub fn stalls_for_camera(&self, camera_id: &str) -> Result<Vec<StallRecord>, RegistryError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(&format!(
            "SELECT {STALL_COLUMNS} FROM stalls WHERE camera_id = ?1 ORDER BY lot_id, stall_id"
        ))?;
        let rows = stmt
            .query_map([camera_id], stall_from_row)?
            .collect::<Result<_, _>>()?;
        Ok(rows)
    }

    pub fn record_observation(
        &self,
        lot_id: &str,
        stall_id: u32,
        blob: Vec<u8>,
        occupied_prob: f32,
        observed_at: DateTime<Utc>,
    ) -> Result<StallRecord, RegistryError> {
        self.record_observations(&[Observation {
            lot_id: lot_id.to_string(),
            stall_id,
            blob,
            occupied_prob,
            observed_at,
        }])?;
        self.get_stall(lot_id, stall_id, true)
    }

    /// Writes all observations in one transaction: either every stall is
    /// updated or none is.
    pub fn record_observations(&self, observations: &[Observation]) -> Result<(), RegistryError> {
        for o in observations {
            if !(0.0..=1.0).contains(&o.occupied_prob) {
                return Err(RegistryError::Invalid(format!(
                    "occupied_prob {} outside [0, 1]",
                    o.occupied_prob
                )));
            }
        }
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        for o in observations {
            let n = tx.execute(
                "UPDATE stalls SET blob = ?3, status = ?4, updated_at = ?5, observed_at = ?5
                 WHERE lot_id = ?1 AND stall_id = ?2",
                params![
                    o.lot_id,
                    o.stall_id,
                    o.blob,
                    StallStatus::from_prob(o.occupied_prob).as_str(),
                    ts(o.observed_at)
                ],
            )?;
            if n == 0 {
                ensure_lot(&tx, &o.lot_id)?;
                return Err(RegistryError::StallNotFound {
                    lot_id: o.lot_id.clone(),
                    stall_id: o.stall_id,
                });
            }
        }
        tx.commit()?;
        Ok(())
    }

    /// Marks stalls of `camera_id` unknown when their last successful
    /// observation is older than `cutoff`. Returns the number changed.
    pub fn mark_stale(
        &self,
        camera_id: &str,
        cutoff: DateTime<Utc>,
        now: DateTime<Utc>,
    ) -> Result<usize, RegistryError> {
        let n = self.conn().execute(
            "UPDATE stalls SET status = 'unknown', updated_at = ?3
             WHERE camera_id = ?1 AND status != 'unknown'
               AND (observed_at IS NULL OR observed_at < ?2)",
            params![camera_id, ts(cutoff), ts(now)],
        )?;
        Ok(n)
    }

    /// All stalls of the lot ordered by stall id.
    pub fn lot_status(
        &self,
        lot_id: &str,
        include_blobs: bool,
    ) -> Result<Vec<StallRecord>, RegistryError> {
        let conn = self.conn();
        ensure_lot(&conn, lot_id)?;
        let mut stmt = conn.prepare(&format!(
            "SELECT {STALL_COLUMNS}, blob FROM stalls WHERE lot_id = ?1 ORDER BY stall_id"
        ))?;
        let rows = stmt
            .query_map([lot_id], |r| {
                let mut rec = stall_from_row(r)?;
                if include_blobs {
                    rec.blob = r.get(9)?;
                }
                Ok(rec)
            })?
            .collect::<Result<_, _>>()?;
        Ok(rows)
    }

    pub fn summary(&self, lot_id: &str) -> Result<Summary, RegistryError> {
        let conn = self.conn();
        ensure_lot(&conn, lot_id)?;
        let s = conn.query_row(
            "SELECT COUNT(*),
                    COALESCE(SUM(status = 'vacant'), 0),
                    COALESCE(SUM(status = 'unknown'), 0)
             FROM stalls WHERE lot_id = ?1",
            [lot_id],
            |r| {
                Ok(Summary {
                    total: r.get(0)?,
                    free: r.get(1)?,
                    unknown: r.get(2)?,
                })
            },
        )?;
        Ok(s)
    }

    // ---- frames ----

    pub fn store_frame(&self, frame: &StoredFrame) -> Result<(), RegistryError> {
        let n = self.conn().execute(
            "INSERT INTO frames (camera_id, png, width, height, captured_at)
             SELECT ?1, ?2, ?3, ?4, ?5 WHERE EXISTS (SELECT 1 FROM cameras WHERE camera_id = ?1)
             ON CONFLICT(camera_id) DO UPDATE SET png = excluded.png, width = excluded.width,
                height = excluded.height, captured_at = excluded.captured_at",
            params![
                frame.camera_id,
                frame.png,
                frame.width,
                frame.height,
                ts(frame.captured_at)
            ],
        )?;
        found(n, || RegistryError::CameraNotFound(frame.camera_id.clone()))
    }

    pub fn latest_frame(&self, camera_id: &str) -> Result<Option<StoredFrame>, RegistryError> {
        let frame = self
            .conn()
            .query_row(
                "SELECT png, width, height, captured_at FROM frames WHERE camera_id = ?1",
                [camera_id],
                |r| {
                    let at: String = r.get(3)?;
                    Ok(StoredFrame {
                        camera_id: camera_id.to_string(),
                        png: r.get(0)?,
                        width: r.get(1)?,
                        height: r.get(2)?,
                        captured_at: parse_ts(&at)?,
                    })
                },
            )
            .optional()?;
        Ok(frame)
    }
}

fn found(rows: usize, err: impl FnOnce() -> RegistryError) -> Result<(), RegistryError> {
    if rows == 0 {
        Err(err())
    } else {
        Ok(())
    }
}

fn ensure_lot(conn: &Connection, lot_id: &str) -> Result<(), RegistryError> {
    let exists: bool = conn.query_row(
        "SELECT EXISTS (SELECT 1 FROM lots WHERE lot_id = ?1)",
        [lot_id],
        |r| r.get(0),
    )?;
    if exists {
        Ok(())
    } else {
        Err(RegistryError::LotNotFound(lot_id.to_string()))
    }
}

fn lot_record(conn: &Connection, lot_id: &str) -> Result<LotRecord, RegistryError> {
    let display_name: String = conn
        .query_row(
            "SELECT display_name FROM lots WHERE lot_id = ?1",
            [lot_id],
            |r| r.get(0),
        )
        .optional()?
        .ok_or_else(|| RegistryError::LotNotFound(lot_id.to_string()))?;
    let camera_ids = conn
        .prepare("SELECT camera_id FROM cameras WHERE lot_id = ?1 ORDER BY camera_id")?
        .query_map([lot_id], |r| r.get(0))?
        .collect::<Result<_, _>>()?;
    Ok(LotRecord {
        lot_id: lot_id.to_string(),
        display_name,
        camera_ids,
    })
}

fn stall_row(
    conn: &Connection,
    lot_id: &str,
    stall_id: u32,
) -> Result<Option<StallRecord>, RegistryError> {
    Ok(conn
        .query_row(
            &format!("SELECT {STALL_COLUMNS} FROM stalls WHERE lot_id = ?1 AND stall_id = ?2"),
            params![lot_id, stall_id],
            stall_from_row,
        )
        .optional()?)
}

fn current_version(conn: &Connection) -> rusqlite::Result<u32> {
    conn.execute_batch("CREATE TABLE IF NOT EXISTS schema_version (version INTEGER NOT NULL)")?;
    let v: Option<u32> = conn
        .query_row("SELECT version FROM schema_version", [], |r| r.get(0))
        .optional()?;
    Ok(v.unwrap_or(0))
}

fn migrate(conn: &mut Connection) -> Result<(), RegistryError> {
    let tx: Transaction<'_> = conn.transaction()?;
    let from = current_version(&tx)?;
    if from > SCHEMA_VERSION {
        return Err(RegistryError::SchemaTooNew {
            found: from,
            supported: SCHEMA_VERSION,
        });
    }
    for (i, sql) in MIGRATIONS.iter().enumerate().skip(from as usize) {
        tracing::info!(to = i + 1, "applying registry migration");
        tx.execute_batch(sql)?;
    }
    tx.execute("DELETE FROM schema_version", [])?;
    tx.execute(
        "INSERT INTO schema_version (version) VALUES (?1)",
        [SCHEMA_VERSION],
    )?;
    tx.commit()?;
    Ok(())
}
