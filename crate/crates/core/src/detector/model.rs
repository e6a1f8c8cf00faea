use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::preprocess::{Preprocessor, DEFAULT_CHANNEL_MEAN};
use super::spec::{ModelSpec, CONV_STAGES, FC_LAYERS};
use super::ModelError;
use crate::tensor::{
    conv2d, conv2d_backward, linear, linear_backward, maxpool2d, maxpool2d_backward, relu,
    relu_backward, softmax, LayerParams, PoolIndex, Tensor, TensorError,
};
use crate::Label;

/// Output of the binary head for one crop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub occupied_prob: f32,
    pub label: Label,
}

impl Prediction {
    /// Softmax over `[vacant, occupied]` logits.
    pub fn from_logits(vacant: f32, occupied: f32) -> Prediction {
        let max = vacant.max(occupied);
        let ev = (vacant - max).exp();
        let eo = (occupied - max).exp();
        let occupied_prob = eo / (ev + eo);
        Prediction {
            occupied_prob,
            label: Label::from_prob(occupied_prob),
        }
    }
}

/// Detector network: five conv/ReLU/max-pool stages then three fully
/// connected layers ending in a two-way head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    /// Conv layers first, then FC layers.
    pub(crate) params: Vec<LayerParams>,
    channel_means: [f32; 3],
}

pub(crate) struct ConvTrace {
    inputs: Vec<Tensor>,
    pre_act: Vec<Tensor>,
    pooled_from: Vec<Vec<usize>>,
    pools: Vec<PoolIndex>,
    out_shape: Vec<usize>,
}

pub(crate) struct HeadTrace {
    inputs: Vec<Tensor>,
    pre_act: Vec<Tensor>,
}

impl Model {
    /// Builds a freshly initialised network.
    ///
    /// Hidden layers get uniform fan-in scaled weights (`±√(6/fan_in)`); the
    /// binary head starts at zero so a new model is exactly undecided. All
    /// biases start at zero. Initialisation is a pure function of `spec.seed`.
    pub fn build(spec: ModelSpec) -> Result<Model, ModelError> {
        let shapes = spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let last = shapes.layers.len() - 1;
        let params = shapes
            .layers
            .iter()
            .enumerate()
            .map(|(i, (wshape, bias_len))| {
                let fan_in: usize = if wshape.len() == 4 {
                    wshape[1..].iter().product()
                } else {
                    wshape[0]
                };
                let bound = (6.0 / fan_in as f64).sqrt() as f32;
                let len: usize = wshape.iter().product();
                let data = if i == last {
                    vec![0.0; len]
                } else {
                    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
                };
                LayerParams::new(
                    Tensor::from_vec(wshape, data).expect("shape from validated spec"),
                    Tensor::zeros(&[*bias_len]),
                )
            })
            .collect();
        Ok(Model {
            spec,
            params,
            channel_means: [DEFAULT_CHANNEL_MEAN; 3],
        })
    }

    pub(crate) fn from_parts(
        spec: ModelSpec,
        params: Vec<LayerParams>,
        channel_means: [f32; 3],
    ) -> Model {
        Model {
            spec,
            params,
            channel_means,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn conv_layers(&self) -> &[LayerParams] {
        &self.params[..CONV_STAGES]
    }

    pub fn fc_layers(&self) -> &[LayerParams] {
        &self.params[CONV_STAGES..]
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(LayerParams::param_count).sum()
    }

    pub fn channel_means(&self) -> [f32; 3] {
        self.channel_means
    }

    pub fn set_channel_means(&mut self, means: [f32; 3]) {
        self.channel_means = means;
    }

    /// Marks the five conv layers frozen (or trainable).
    pub fn freeze_conv(&mut self, frozen: bool) {
        for p in &mut self.params[..CONV_STAGES] {
            p.frozen = frozen;
        }
    }

    pub fn preprocessor(&self) -> Preprocessor {
        Preprocessor {
            height: self.spec.input_height,
            width: self.spec.input_width,
            channel_means: self.channel_means,
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<usize, ModelError> {
        let [n, c, h, w] = input.dims4("model input")?;
        let want = [
            self.spec.input_channels,
            self.spec.input_height,
            self.spec.input_width,
        ];
        if [c, h, w] != want {
            return Err(TensorError::Dimension {
                op: "model input",
                detail: format!("got [{n}, {c}, {h}, {w}], model expects [N, {want:?}]"),
            }
            .into());
        }
        Ok(n)
    }

    /// Flattened conv features `[N, F]`.
    pub fn features(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        let n = self.check_input(input)?;
        let mut x = input.clone();
        for (st, p) in self.spec.conv_stages.iter().zip(&self.params) {
            let z = conv2d(&x, p, st.stride, st.pad)?;
            let a = relu(&z);
            x = maxpool2d(&a, st.pool_window, st.pool_stride)?.0;
        }
        let f = x.len() / n;
        Ok(x.reshape(&[n, f])?)
    }

    /// Logits `[N, 2]` from flattened features.
    pub fn head_logits(&self, features: &Tensor) -> Result<Tensor, ModelError> {
        let mut h = features.clone();
        for (i, p) in self.params[CONV_STAGES..].iter().enumerate() {
            h = linear(&h, p)?;
            if i + 1 < FC_LAYERS {
                h = relu(&h);
            }
        }
        Ok(h)
    }

    pub fn logits(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        self.head_logits(&self.features(input)?)
    }

    /// Occupied probability and label for a single `[1, 3, H, W]` input.
    pub fn predict(&self, input: &Tensor) -> Result<Prediction, ModelError> {
        if input.shape().first() != Some(&1) {
            return Err(TensorError::Dimension {
                op: "predict",
                detail: format!("expected batch of 1, got {:?}", input.shape()),
            }
            .into());
        }
        let z = self.logits(input)?;
        Ok(Prediction::from_logits(z.data()[0], z.data()[1]))
    }

    /// Occupied probabilities for every row of a batch.
    pub fn predict_batch(&self, input: &Tensor) -> Result<Vec<f32>, ModelError> {
        let probs = softmax(&self.logits(input)?)?;
        Ok(probs.data().chunks(2).map(|r| r[1]).collect())
    }

    /// Preprocesses a decoded crop and classifies it.
    pub fn predict_image(&self, image: &RgbImage) -> Result<Prediction, ModelError> {
        self.predict(&self.preprocessor().apply(image)?)
    }

    pub(crate) fn conv_forward_traced(
        &self,
        input: &Tensor,
    ) -> Result<(Tensor, ConvTrace), ModelError> {
        let n = self.check_input(input)?;
        let mut trace = ConvTrace {
            inputs: Vec::with_capacity(CONV_STAGES),
            pre_act: Vec::with_capacity(CONV_STAGES),
            pooled_from: Vec::with_capacity(CONV_STAGES),
            pools: Vec::with_capacity(CONV_STAGES),
            out_shape: Vec::new(),
        };
        let mut x = input.clone();
        for (st, p) in self.spec.conv_stages.iter().zip(&self.params) {
            let z = conv2d(&x, p, st.stride, st.pad)?;
            let a = relu(&z);
            let (pooled, index) = maxpool2d(&a, st.pool_window, st.pool_stride)?;
            trace.inputs.push(x);
            trace.pooled_from.push(a.shape().to_vec());
            trace.pre_act.push(z);
            trace.pools.push(index);
            x = pooled;
        }
        trace.out_shape = x.shape().to_vec();
        let f = x.len() / n;
        Ok((x.reshape(&[n, f])?, trace))
    }

    /// Accumulates conv parameter gradients from the gradient w.r.t. the
    /// flattened features.
    pub(crate) fn conv_backward(
        &mut self,
        trace: ConvTrace,
        grad_features: Tensor,
    ) -> Result<(), ModelError> {
        let mut g = grad_features.reshape(&trace.out_shape)?;
        let stages = self.spec.conv_stages.clone();
        for i in (0..CONV_STAGES).rev() {
            let st = &stages[i];
            let ga = maxpool2d_backward(&trace.pools[i], &g, &trace.pooled_from[i])?;
            let gz = relu_backward(&trace.pre_act[i], &ga)?;
            g = conv2d_backward(
                &trace.inputs[i],
                &mut self.params[i],
                &gz,
                st.stride,
                st.pad,
                i > 0,
            )?;
        }
        Ok(())
    }

    pub(crate) fn head_forward_traced(
        &self,
        features: &Tensor,
    ) -> Result<(Tensor, HeadTrace), ModelError> {
        let mut trace = HeadTrace {
            inputs: Vec::with_capacity(FC_LAYERS),
            pre_act: Vec::with_capacity(FC_LAYERS - 1),
        };
        let mut h = features.clone();
        for (i, p) in self.params[CONV_STAGES..].iter().enumerate() {
            let z = linear(&h, p)?;
            trace.inputs.push(h);
            if i + 1 < FC_LAYERS {
                h = relu(&z);
                trace.pre_act.push(z);
            } else {
                h = z;
            }
        }
        Ok((h, trace))
    }

    /// Accumulates FC gradients and returns the gradient w.r.t. the features.
    pub(crate) fn head_backward(
        &mut self,
        trace: HeadTrace,
        grad_logits: Tensor,
    ) -> Result<Tensor, ModelError> {
        let mut g = grad_logits;
        for i in (0..FC_LAYERS).rev() {
            if i + 1 < FC_LAYERS {
                g = relu_backward(&trace.pre_act[i], &g)?;
            }
            g = linear_backward(&trace.inputs[i], &mut self.params[CONV_STAGES + i], &g)?;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ModelSpec {
        ModelSpec::desk().with_input_size(32, 32).with_seed(3)
    }

    #[test]
    fn fresh_model_is_undecided() {
        let model = Model::build(small_spec()).unwrap();
        let input = Tensor::from_vec(
            &[1, 3, 32, 32],
            (0..3 * 32 * 32)
                .map(|i| ((i % 17) as f32 / 17.0) - 0.5)
                .collect(),
        )
        .unwrap();
        let p = model.predict(&input).unwrap();
        assert_eq!(p.occupied_prob, 0.5);
        assert_eq!(p.label, Label::Occupied);
    }

    #[test]
    fn build_is_seed_deterministic() {
        let a = Model::build(small_spec()).unwrap();
        let b = Model::build(small_spec()).unwrap();
        assert_eq!(a, b);
        let c = Model::build(small_spec().with_seed(4)).unwrap();
        assert_ne!(a.params[0].weights, c.params[0].weights);
    }

    #[test]
    fn param_shapes_follow_spec() {
        let model = Model::build(ModelSpec::desk()).unwrap();
        assert_eq!(model.param_count(), 75_442);
        assert_eq!(model.params[0].weights.shape(), &[8, 3, 5, 5]);
        assert_eq!(model.params[5].weights.shape(), &[256, 128]);
        assert_eq!(model.params[7].weights.shape(), &[64, 2]);
        assert!(model.params.iter().all(|p| !p.frozen));
    }

    #[test]
    fn wrong_input_shape_is_dimension_error() {
        let model = Model::build(small_spec()).unwrap();
        let err = model.predict(&Tensor::zeros(&[1, 3, 16, 16])).unwrap_err();
        assert!(matches!(
            err,
            ModelError::Tensor(TensorError::Dimension { .. })
        ));
    }

    #[test]
    fn logit_shift_keeps_label() {
        for (a, b) in [(0.3f32, -1.2f32), (2.0, 2.5), (-7.0, -7.0)] {
            let p = Prediction::from_logits(a, b);
            for shift in [-100.0f32, -1.0, 0.5, 40.0] {
                let q = Prediction::from_logits(a + shift, b + shift);
                assert_eq!(p.label, q.label);
                assert!((p.occupied_prob - q.occupied_prob).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn traced_forward_matches_plain_forward() {
        let mut model = Model::build(small_spec()).unwrap();
        // give the head some weight so logits are not all zero
        for v in model.params[7].weights.data_mut() {
            *v = 0.1;
        }
        let input = Tensor::from_vec(
            &[2, 3, 32, 32],
            (0..2 * 3 * 32 * 32)
                .map(|i| ((i * 7 % 23) as f32 / 23.0) - 0.5)
                .collect(),
        )
        .unwrap();
        let (feats, _) = model.conv_forward_traced(&input).unwrap();
        let (logits, _) = model.head_forward_traced(&feats).unwrap();
        assert_eq!(logits, model.logits(&input).unwrap());
    }
}
