//! Labeled stall-crop datasets: directory indexing, deterministic splits,
//! batch loading and synthetic fixtures.

mod index;
mod synth;

use std::path::{Path, PathBuf};

use image::RgbImage;
use thiserror::Error;

use crate::detector::{ModelError, Preprocessor, SampleSource};
use crate::tensor::Tensor;
use crate::Label;

pub use index::{scan_tree, split, DatasetIndex, SampleRecord, Weather};
pub use synth::{
    mean_brightness, synth_crop, synth_generate, synth_generate_lot, SYNTH_CROP_SIZE, SYNTH_LOT,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no labeled images found under {0}")]
    EmptyIndex(PathBuf),
    #[error("{0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("duplicate sample path {0}")]
    DuplicatePath(PathBuf),
    #[error("split ratio must be strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("lot {0:?} not present in the dataset")]
    MissingLot(String),
    #[error("sample id {id} out of range for {len} records")]
    InvalidId { id: usize, len: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("cannot write {path}: {message}")]
    Encode { path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("preprocessing failed for {path}: {source}")]
    Preprocess {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub fn load_image(path: &Path) -> Result<RgbImage, DatasetError> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| DatasetError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn load_one(
    index: &DatasetIndex,
    id: usize,
    pre: &Preprocessor,
) -> Result<(Tensor, Label), DatasetError> {
    let record = index.records().get(id).ok_or(DatasetError::InvalidId {
        id,
        len: index.len(),
    })?;
    let path = index.full_path(record);
    let img = load_image(&path)?;
    let t = pre
        .apply(&img)
        .map_err(|source| DatasetError::Preprocess { path, source })?;
    Ok((t, record.label))
}

/// Decodes and preprocesses the given records into one `[B, 3, H, W]` batch.
pub fn load_batch(
    index: &DatasetIndex,
    ids: &[usize],
    pre: &Preprocessor,
) -> Result<(Tensor, Vec<Label>), DatasetError> {
    if ids.is_empty() {
        return Err(DatasetError::EmptyBatch);
    }
    let mut inputs = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for &id in ids {
        let (t, l) = load_one(index, id, pre)?;
        inputs.push(t);
        labels.push(l);
    }
    let batch = Tensor::stack(&inputs.iter().collect::<Vec<_>>()).expect("uniform shapes");
    Ok((batch, labels))
}

/// Per-channel mean of all pixels in the index, scaled to `[0, 1]`.
pub fn channel_means(index: &DatasetIndex) -> Result<[f32; 3], DatasetError> {
    let mut sums = [0f64; 3];
    let mut count = 0u64;
    for r in index.records() {
        let img = load_image(&index.full_path(r))?;
        for px in img.pixels() {
            for c in 0..3 {
                sums[c] += px[c] as f64;
            }
        }
        count += img.width() as u64 * img.height() as u64;
    }
    if count == 0 {
        return Err(DatasetError::EmptyBatch);
    }
    Ok(sums.map(|s| (s / count as f64 / 255.0) as f32))
}

/// Dataset-backed [`SampleSource`] that decodes crops on demand.
pub struct IndexedSamples<'a> {
    index: &'a DatasetIndex,
    pre: Preprocessor,
}

impl<'a> IndexedSamples<'a> {
    pub fn new(index: &'a DatasetIndex, pre: Preprocessor) -> Self {
        IndexedSamples { index, pre }
    }
}

impl SampleSource for IndexedSamples<'_> {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn label(&self, i: usize) -> Label {
        self.index.records()[i].label
    }

    fn input(&self, i: usize) -> Result<Tensor, DatasetError> {
        load_one(self.index, i, &self.pre).map(|(t, _)| t)
    }
}
