use std::cell::RefCell;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::Model;
use super::ModelError;
use crate::dataset::{DatasetError, DatasetIndex, IndexedSamples};
use crate::tensor::{sgd_update, softmax_cross_entropy, Tensor, TensorError};
use crate::Label;

/// Iterations per loss-curve entry.
pub const LOSS_LOG_STRIDE: usize = 10;

/// Fine-tuning recipe. Defaults: SGD at lr 0.01 with step decay, weight
/// decay 5e-4, batches of 128, 3000 iterations, conv layers frozen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f32,
    /// Learning rate is multiplied by this every `lr_decay_every` iterations.
    pub lr_decay_factor: f32,
    pub lr_decay_every: usize,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub iterations: usize,
    pub freeze_conv: bool,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lr: 0.01,
            lr_decay_factor: 0.1,
            lr_decay_every: 1000,
            weight_decay: 0.0005,
            batch_size: 128,
            iterations: 3000,
            freeze_conv: true,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Validation(msg.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad("lr_decay_factor must be positive");
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be at least 1");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        Ok(())
    }

    /// Step-decayed learning rate in effect at `iteration` (0-based).
    pub fn lr_at(&self, iteration: usize) -> f32 {
        let steps = (iteration / self.lr_decay_every) as i32;
        self.lr * self.lr_decay_factor.powi(steps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `(iteration, mean batch loss over the preceding LOSS_LOG_STRIDE iterations)`.
    pub loss_curve: Vec<(usize, f32)>,
    pub final_train_accuracy: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Validation(String),
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Random-access labeled training samples.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn label(&self, i: usize) -> Label;
    /// Preprocessed `[1, 3, H, W]` input for sample `i`.
    fn input(&self, i: usize) -> Result<Tensor, DatasetError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples held in memory, mainly for tests and synthetic runs.
pub struct InMemorySamples {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<Label>,
}

impl SampleSource for InMemorySamples {
    fn len(&self) -> usize {
        self.inputs.len()
    }
    fn label(&self, i: usize) -> Label {
        self.labels[i]
    }
    fn input(&self, i: usize) -> Result<Tensor, DatasetError> {
        Ok(self.inputs[i].clone())
    }
}

/// Fine-tunes `model` on the crops listed in `train`, decoding them with the
/// model's own preprocessing.
pub fn fine_tune(
    model: &mut Model,
    train: &DatasetIndex,
    hp: &Hyperparams,
) -> Result<TrainReport, TrainError> {
    let samples = IndexedSamples::new(train, model.preprocessor());
    fine_tune_on(model, &samples, hp)
}

/// Per-sample tensors computed lazily and kept for the whole run. With the
/// conv stack frozen its output is a fixed function of the input, so the
/// flattened features are what gets cached.
struct Cache<'a> {
    source: &'a dyn SampleSource,
    entries: RefCell<Vec<Option<Tensor>>>,
}

impl<'a> Cache<'a> {
    fn new(source: &'a dyn SampleSource) -> Self {
        Cache {
            source,
            entries: RefCell::new(vec![None; source.len()]),
        }
    }

    fn get(
        &self,
        i: usize,
        f: impl FnOnce(Tensor) -> Result<Tensor, ModelError>,
    ) -> Result<Tensor, TrainError> {
        if let Some(t) = &self.entries.borrow()[i] {
            return Ok(t.clone());
        }
        let t = f(self.source.input(i)?)?;
        self.entries.borrow_mut()[i] = Some(t.clone());
        Ok(t)
    }
}

pub fn fine_tune_on(
    model: &mut Model,
    samples: &dyn SampleSource,
    hp: &Hyperparams,
) -> Result<TrainReport, TrainError> {
    hp.validate()?;
    let n = samples.len();
    let positives = (0..n)
        .filter(|&i| samples.label(i) == Label::Occupied)
        .count();
    if n == 0 || positives == 0 || positives == n {
        return Err(TrainError::Validation(format!(
            "training set needs both labels, got {positives} occupied of {n}"
        )));
    }

    let started = Instant::now();
    model.freeze_conv(hp.freeze_conv);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let cache = Cache::new(samples);
    let mut loss_curve = Vec::with_capacity(hp.iterations / LOSS_LOG_STRIDE);
    let mut window_loss = 0.0f64;

    for it in 0..hp.iterations {
        let ids: Vec<usize> = (0..hp.batch_size).map(|_| rng.random_range(0..n)).collect();
        let labels: Vec<usize> = ids.iter().map(|&i| samples.label(i).index()).collect();

        let loss = if hp.freeze_conv {
            let feats = ids
                .iter()
                .map(|&i| cache.get(i, |x| model.features(&x)))
                .collect::<Result<Vec<_>, _>>()?;
            let batch =
                Tensor::stack(&feats.iter().collect::<Vec<_>>()).map_err(ModelError::from)?;
            let (logits, trace) = model.head_forward_traced(&batch)?;
            let ce = softmax_cross_entropy(&logits, &labels).map_err(ModelError::from)?;
            model.head_backward(trace, ce.grad_logits)?;
            ce.loss
        } else {
            let inputs = ids
                .iter()
                .map(|&i| cache.get(i, Ok))
                .collect::<Result<Vec<_>, _>>()?;
            let batch =
                Tensor::stack(&inputs.iter().collect::<Vec<_>>()).map_err(ModelError::from)?;
            let (feats, conv_trace) = model.conv_forward_traced(&batch)?;
            let (logits, head_trace) = model.head_forward_traced(&feats)?;
            let ce = softmax_cross_entropy(&logits, &labels).map_err(ModelError::from)?;
            let grad_feats = model.head_backward(head_trace, ce.grad_logits)?;
            model.conv_backward(conv_trace, grad_feats)?;
            ce.loss
        };

        if !loss.is_finite() {
            return Err(TrainError::Diverged {
                iteration: it,
                detail: format!("loss is {loss}"),
            });
        }
        let lr = hp.lr_at(it);
        for p in &mut model.params {
            sgd_update(p, lr, hp.weight_decay).map_err(|e| match e {
                TensorError::NonFiniteGradient { .. } => TrainError::Diverged {
                    iteration: it,
                    detail: e.to_string(),
                },
                other => TrainError::Model(other.into()),
            })?;
        }

        window_loss += loss as f64;
        if (it + 1) % LOSS_LOG_STRIDE == 0 {
            let mean = (window_loss / LOSS_LOG_STRIDE as f64) as f32;
            loss_curve.push((it + 1, mean));
            window_loss = 0.0;
            if (it + 1) % 100 == 0 {
                tracing::debug!(iteration = it + 1, loss = mean, lr, "fine-tune progress");
            }
        }
    }

    let mut correct = 0usize;
    for i in 0..n {
        let prob = if hp.freeze_conv {
            let f = cache.get(i, |x| model.features(&x))?;
            let z = model.head_logits(&f)?;
            super::Prediction::from_logits(z.data()[0], z.data()[1]).occupied_prob
        } else {
            let x = cache.get(i, Ok)?;
            model.predict(&x)?.occupied_prob
        };
        if Label::from_prob(prob) == samples.label(i) {
            correct += 1;
        }
    }

    Ok(TrainReport {
        loss_curve,
        final_train_accuracy: correct as f64 / n as f64,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ModelSpec;

    fn spec() -> ModelSpec {
        ModelSpec::desk().with_input_size(32, 32).with_seed(5)
    }

    /// Flat images whose brightness encodes the label.
    fn brightness_samples(n: usize) -> InMemorySamples {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = if i % 2 == 0 {
                Label::Occupied
            } else {
                Label::Vacant
            };
            let level = match label {
                Label::Occupied => 0.3,
                Label::Vacant => -0.3,
            } + (i as f32 * 0.013).sin() * 0.1;
            let data = (0..3 * 32 * 32)
                .map(|j| level + ((i * 31 + j * 7) % 11) as f32 * 0.01)
                .collect();
            inputs.push(Tensor::from_vec(&[1, 3, 32, 32], data).unwrap());
            labels.push(label);
        }
        InMemorySamples { inputs, labels }
    }

    #[test]
    fn defaults_are_the_recipe() {
        let hp = Hyperparams::default();
        assert_eq!(hp.lr, 0.01);
        assert_eq!(hp.weight_decay, 0.0005);
        assert_eq!(hp.batch_size, 128);
        assert_eq!(hp.iterations, 3000);
        assert!(hp.freeze_conv);
        assert!((hp.lr_at(999) - 0.01).abs() < 1e-9);
        assert!((hp.lr_at(1000) - 0.001).abs() < 1e-9);
        assert!((hp.lr_at(2500) - 0.0001).abs() < 1e-9);
    }

    #[test]
    fn zero_iterations_rejected() {
        let hp = Hyperparams {
            iterations: 0,
            ..Default::default()
        };
        assert!(matches!(hp.validate(), Err(TrainError::Validation(_))));
    }

    #[test]
    fn single_label_dataset_rejected() {
        let mut s = brightness_samples(4);
        s.labels = vec![Label::Vacant; 4];
        let mut model = Model::build(spec()).unwrap();
        let err = fine_tune_on(&mut model, &s, &Hyperparams::default()).unwrap_err();
        assert!(matches!(err, TrainError::Validation(_)));
    }

    #[test]
    fn one_step_touches_only_unfrozen_layers() {
        let s = brightness_samples(8);
        let mut model = Model::build(spec()).unwrap();
        let before = model.clone();
        let hp = Hyperparams {
            iterations: 1,
            batch_size: 4,
            ..Default::default()
        };
        let report = fine_tune_on(&mut model, &s, &hp).unwrap();
        assert!(report.loss_curve.is_empty());
        for (a, b) in model.conv_layers().iter().zip(before.conv_layers()) {
            assert_eq!(a.weights, b.weights);
            assert_eq!(a.bias, b.bias);
        }
        // the zero-initialised head receives gradient on the first step
        assert_ne!(model.fc_layers()[2].weights, before.fc_layers()[2].weights);
    }

    #[test]
    fn unfrozen_conv_moves_once_gradient_flows() {
        let s = brightness_samples(8);
        let mut model = Model::build(spec()).unwrap();
        let hp = Hyperparams {
            iterations: 1,
            batch_size: 4,
            freeze_conv: false,
            ..Default::default()
        };
        // first step only reaches the head, which starts at zero
        fine_tune_on(&mut model, &s, &hp).unwrap();
        let before = model.clone();
        fine_tune_on(&mut model, &s, &hp).unwrap();
        let changed = model
            .conv_layers()
            .iter()
            .zip(before.conv_layers())
            .any(|(a, b)| a.weights != b.weights);
        assert!(changed);
    }

    #[test]
    fn same_seed_same_curve() {
        let s = brightness_samples(16);
        let hp = Hyperparams {
            iterations: 30,
            batch_size: 8,
            seed: 9,
            ..Default::default()
        };
        let mut a = Model::build(spec()).unwrap();
        let mut b = Model::build(spec()).unwrap();
        let ra = fine_tune_on(&mut a, &s, &hp).unwrap();
        let rb = fine_tune_on(&mut b, &s, &hp).unwrap();
        assert_eq!(ra.loss_curve, rb.loss_curve);
        assert_eq!(ra.loss_curve.len(), 3);
        assert_eq!(a, b);
    }

    #[test]
    fn learns_brightness() {
        let s = brightness_samples(40);
        let mut model = Model::build(spec()).unwrap();
        let hp = Hyperparams {
            iterations: 300,
            batch_size: 16,
            ..Default::default()
        };
        let report = fine_tune_on(&mut model, &s, &hp).unwrap();
        assert!(report.final_train_accuracy >= 0.95, "{report:?}");
    }

    #[test]
    fn divergence_reports_iteration() {
        let s = brightness_samples(8);
        let mut model = Model::build(spec()).unwrap();
        model.params[7].bias.data_mut()[0] = f32::INFINITY;
        let hp = Hyperparams {
            iterations: 5,
            batch_size: 4,
            ..Default::default()
        };
        match fine_tune_on(&mut model, &s, &hp) {
            Err(TrainError::Diverged { iteration: 0, .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
