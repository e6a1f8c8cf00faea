//! The binary occupancy classifier: topology, preprocessing, fine-tuning and
//! the on-disk model format.

mod io;
mod model;
mod preprocess;
mod spec;
mod train;

use thiserror::Error;

use crate::tensor::TensorError;

pub use io::{FormatError, FORMAT_VERSION, HEADER_LEN, MAGIC};
pub use model::{Model, Prediction};
pub use preprocess::{resize_bilinear, Preprocessor, DEFAULT_CHANNEL_MEAN};
pub use spec::{ConvStage, ModelSpec, SpecError, SpecShapes, CONV_STAGES, FC_LAYERS};
pub use train::{
    fine_tune, fine_tune_on, Hyperparams, InMemorySamples, SampleSource, TrainError, TrainReport,
    LOSS_LOG_STRIDE,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("model file I/O: {0}")]
    Io(#[from] std::io::Error),
}
