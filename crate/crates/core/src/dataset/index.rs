use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use super::DatasetError;
use crate::Label;

const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weather {
    Sunny,
    Rainy,
    Cloudy,
    Unknown,
}

impl Weather {
    fn parse(segment: &str) -> Option<Weather> {
        match segment.to_ascii_lowercase().as_str() {
            "sunny" => Some(Weather::Sunny),
            "rainy" => Some(Weather::Rainy),
            "cloudy" => Some(Weather::Cloudy),
            _ => None,
        }
    }
}

/// One labeled stall crop. `path` is relative to the index root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub path: PathBuf,
    pub lot: String,
    pub label: Label,
    pub weather: Weather,
    pub captured_at: Option<NaiveDateTime>,
}

impl SampleRecord {
    /// Forward-slash form of the relative path; the split hash key.
    pub fn key(&self) -> String {
        self.path
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }
}

/// Inventory of labeled crops under one root directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    root: PathBuf,
    records: Vec<SampleRecord>,
    counts: BTreeMap<(String, Label), usize>,
}

impl DatasetIndex {
    pub fn new(root: impl Into<PathBuf>, records: Vec<SampleRecord>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.path.clone()) {
                return Err(DatasetError::DuplicatePath(r.path.clone()));
            }
        }
        let mut counts = BTreeMap::new();
        for r in &records {
            *counts.entry((r.lot.clone(), r.label)).or_insert(0) += 1;
        }
        Ok(DatasetIndex {
            root: root.into(),
            records,
            counts,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sample counts per `(lot, label)`.
    pub fn counts(&self) -> &BTreeMap<(String, Label), usize> {
        &self.counts
    }

    pub fn count(&self, lot: &str, label: Label) -> usize {
        self.counts
            .get(&(lot.to_string(), label))
            .copied()
            .unwrap_or(0)
    }

    pub fn lots(&self) -> Vec<String> {
        let mut lots: Vec<String> = self.counts.keys().map(|(l, _)| l.clone()).collect();
        lots.dedup();
        lots
    }

    pub fn full_path(&self, record: &SampleRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    fn subset(&self, keep: impl Fn(&SampleRecord) -> bool) -> DatasetIndex {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        DatasetIndex::new(self.root.clone(), records).expect("subset of a valid index")
    }

    /// Records belonging to any of `lots`. Every lot must be present.
    pub fn filter_lots(&self, lots: &[impl AsRef<str>]) -> Result<DatasetIndex, DatasetError> {
        let known = self.lots();
        for lot in lots {
            if !known.iter().any(|k| k == lot.as_ref()) {
                return Err(DatasetError::MissingLot(lot.as_ref().to_string()));
            }
        }
        Ok(self.subset(|r| lots.iter().any(|l| l.as_ref() == r.lot)))
    }

    /// Writes one JSON object per line with `path`, `lot`, `label`, `weather`.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            path: String,
            lot: &'a str,
            label: Label,
            weather: Weather,
        }
        for r in &self.records {
            let line = Line {
                path: self.full_path(r).to_string_lossy().into_owned(),
                lot: &r.lot,
                label: r.label,
                weather: r.weather,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn label_from_dir(name: &str) -> Option<Label> {
    if name.eq_ignore_ascii_case("empty") {
        Some(Label::Vacant)
    } else if name.eq_ignore_ascii_case("occupied") {
        Some(Label::Occupied)
    } else {
        None
    }
}

/// PKLot crop names start with `YYYY-MM-DD_HH_MM_SS`.
fn timestamp_from_name(stem: &str) -> Option<NaiveDateTime> {
    let head = stem.get(..19)?;
    NaiveDateTime::parse_from_str(head, "%Y-%m-%d_%H_%M_%S").ok()
}

/// Indexes `<root>/<lot>/…/{Empty|Occupied}/*.{jpg,png}`.
///
/// The label comes from the immediate parent folder and the lot from the
/// first path segment. Weather (`Sunny`, `Rainy`, `Cloudy`) and a
/// `YYYY-MM-DD` date are picked up from segments in between when present.
/// Files that cannot be opened are skipped with a warning.
pub fn scan_tree(root: impl AsRef<Path>) -> Result<DatasetIndex, DatasetError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(DatasetError::NotADirectory(root.to_path_buf()));
    }
    let mut records = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                tracing::warn!("skipping unreadable entry: {e}");
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let ext_ok = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !ext_ok {
            continue;
        }
        let rel = path.strip_prefix(root).expect("walkdir stays under root");
        let segments: Vec<String> = rel
            .components()
            .filter_map(|c| match c {
                Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
                _ => None,
            })
            .collect();
        // lot / [intermediate …] / label-dir / file
        if segments.len() < 3 {
            continue;
        }
        let Some(label) = label_from_dir(&segments[segments.len() - 2]) else {
            continue;
        };
        if let Err(e) = File::open(path) {
            tracing::warn!("skipping {}: {e}", path.display());
            continue;
        }
        let middle = &segments[1..segments.len() - 2];
        let weather = middle
            .iter()
            .find_map(|s| Weather::parse(s))
            .unwrap_or(Weather::Unknown);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let captured_at = timestamp_from_name(stem).or_else(|| {
            middle
                .iter()
                .find_map(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        });
        records.push(SampleRecord {
            path: rel.to_path_buf(),
            lot: segments[0].clone(),
            label,
            weather,
            captured_at,
        });
    }
    if records.is_empty() {
        return Err(DatasetError::EmptyIndex(root.to_path_buf()));
    }
    DatasetIndex::new(root, records)
}

fn split_hash(seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Deterministic train/test partition.
///
/// Within every `(lot, label)` group records are ordered by a SHA-256 hash of
/// `(seed, relative path)` and the first `round(ratio · group size)` go to the
/// training side, so each lot is split at the requested ratio with both
/// labels represented. The outcome does not depend on record order.
pub fn split(
    index: &DatasetIndex,
    ratio: f64,
    seed: u64,
) -> Result<(DatasetIndex, DatasetIndex), DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    let mut groups: BTreeMap<(&str, Label), Vec<(u64, usize)>> = BTreeMap::new();
    for (i, r) in index.records.iter().enumerate() {
        groups
            .entry((r.lot.as_str(), r.label))
            .or_default()
            .push((split_hash(seed, &r.key()), i));
    }
    let mut in_train = vec![false; index.len()];
    for members in groups.values_mut() {
        members.sort_unstable();
        let take = (ratio * members.len() as f64).round() as usize;
        for &(_, i) in &members[..take] {
            in_train[i] = true;
        }
    }
    let pick = |want: bool| {
        let records = index
            .records
            .iter()
            .zip(&in_train)
            .filter(|(_, &t)| t == want)
            .map(|(r, _)| r.clone())
            .collect();
        DatasetIndex::new(index.root.clone(), records)
    };
    Ok((pick(true)?, pick(false)?))
}
