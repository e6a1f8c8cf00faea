//! Core of the stallwatch parking vacancy system: a small convolutional
//! occupancy classifier with its training loop, crop dataset tooling, and
//! ROC based evaluation.

pub mod dataset;
pub mod detector;
pub mod eval;
mod label;
pub mod tensor;

pub use label::Label;
