use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Layer;
use super::spec::{LayerSpec, ModelSpec, Shape};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::preprocess::PreprocessConfig;
use crate::skeleton::{MotionClass, NUM_CLASSES};

/// Lower clip bound on the true-class probability inside the loss.
pub const LOSS_CLIP: f64 = 1e-7;

/// Everything inference must replay to feed a model the inputs it was
/// trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub preprocess: PreprocessConfig,
    pub fps: u32,
    pub window_len: usize,
}

/// Per-layer gradients, shaped like [`Model::layers`] parameters.
pub type Gradients<T> = Vec<Vec<Tensor<T>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    pub spec: ModelSpec,
    pub layers: Vec<Layer<T>>,
    pub manifest: PipelineManifest,
}

/// Parameter count of a spec without materializing it.
pub fn parameter_count(spec: &ModelSpec) -> Result<usize> {
    let shapes = spec.shapes()?;
    Ok(spec
        .layers
        .iter()
        .zip(&shapes)
        .map(|(l, &input)| Layer::<f32>::param_shapes(l, input).iter().map(|s| s.iter().product::<usize>()).sum::<usize>())
        .sum())
}

/// Materializes a spec with Glorot-uniform weights from a seeded generator,
/// zero biases and unit LSTM forget-gate biases.
pub fn build_model<T: Real>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    let shapes = spec.shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, l) in spec.layers.iter().enumerate() {
        let params = Layer::<T>::param_shapes(l, shapes[i])
            .iter()
            .map(|shape| {
                let mut t = Tensor::<T>::zeros(shape);
                if let Some((fan_in, fan_out)) = Layer::<T>::glorot_fans(l, shape) {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in t.data_mut() {
                        *v = T::lit(rng.random_range(-limit..limit));
                    }
                } else if let LayerSpec::Lstm { units, .. } = *l {
                    t.data_mut()[units..2 * units].fill(T::one());
                }
                t
            })
            .collect();
        layers.push(Layer { spec: *l, input: shapes[i], output: shapes[i + 1], params });
    }
    let manifest = PipelineManifest {
        preprocess: PreprocessConfig::default(),
        fps: crate::ingest::SOURCE_FPS,
        window_len: spec.input_shape.0,
    };
    Ok(Model { spec: spec.clone(), layers, manifest })
}

fn softmax_rows<T: Real>(logits: &mut [T]) {
    for row in logits.chunks_exact_mut(NUM_CLASSES) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// Mean categorical cross-entropy with the true-class probability clipped
/// to `[1e-7, 1]`.
pub fn loss<T: Real>(probabilities: &[T], labels: &[usize]) -> T {
    let clip = T::lit(LOSS_CLIP);
    let total: T = labels
        .iter()
        .enumerate()
        .map(|(b, &y)| -probabilities[b * NUM_CLASSES + y].max(clip).min(T::one()).ln())
        .sum();
    total / T::from_usize(labels.len().max(1)).unwrap()
}

/// Argmax with ties going to the lowest class id.
pub fn argmax(probabilities: &[f32]) -> usize {
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[best] {
            best = i;
        }
    }
    best
}

impl<T: Real> Model<T> {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_shape.0 * self.spec.input_shape.1
    }

    fn check_batch(&self, batch: &[T]) -> Result<usize> {
        let n = self.input_len();
        if batch.is_empty() || batch.len() % n != 0 {
            let (w, f) = self.spec.input_shape;
            return Err(Error::ShapeMismatch { expected: vec![w, f], got: vec![batch.len()] });
        }
        Ok(batch.len() / n)
    }

    /// Class probabilities for a `B × W × F` batch, one row of 10 per sample.
    pub fn forward(&self, batch: &[T]) -> Result<Vec<T>> {
        let b = self.check_batch(batch)?;
        let mut x = batch.to_vec();
        for layer in &self.layers {
            x = layer.forward(x, b, false).0;
        }
        softmax_rows(&mut x);
        Ok(x)
    }

    /// Probabilities, mean loss and exact gradients of the mean loss.
    pub fn loss_and_gradients(&self, batch: &[T], labels: &[usize]) -> Result<(Vec<T>, T, Gradients<T>)> {
        let b = self.check_batch(batch)?;
        if labels.len() != b {
            return Err(Error::ShapeMismatch { expected: vec![b], got: vec![labels.len()] });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange(bad as i64));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.to_vec();
        for layer in &self.layers {
            let (y, cache) = layer.forward(x, b, true);
            caches.push(cache);
            x = y;
        }
        softmax_rows(&mut x);
        let probs = x;
        let mean_loss = loss(&probs, labels);

        // softmax + cross-entropy: d loss / d logits = (p - onehot) / B
        let inv_b = T::one() / T::from_usize(b).unwrap();
        let mut grad = probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            grad[i * NUM_CLASSES + y] = grad[i * NUM_CLASSES + y] - T::one();
        }
        grad.iter_mut().for_each(|g| *g = *g * inv_b);

        let mut grads: Gradients<T> = self
            .layers
            .iter()
            .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())).collect())
            .collect();
        for (idx, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let need_dx = idx > 0;
            match layer.backward(cache, grad, b, &mut grads[idx], need_dx) {
                Some(dx) => grad = dx,
                None => break,
            }
        }
        Ok((probs, mean_loss, grads))
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer { spec: l.spec, input: l.input, output: l.output, params: l.params.iter().map(Tensor::cast).collect() })
                .collect(),
            manifest: self.manifest,
        }
    }

    pub fn params_flat(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.params.iter().flat_map(|p| p.data().iter()))
    }

    pub fn params_flat_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut().flat_map(|p| p.data_mut().iter_mut()))
    }
}

impl Model<f32> {
    /// Predicted class (lowest id on ties) and probabilities for one window
    /// of `W × F` values.
    pub fn predict(&self, window: &[f32]) -> Result<(MotionClass, Vec<f32>)> {
        if window.len() != self.input_len() {
            let (w, f) = self.spec.input_shape;
            return Err(Error::ShapeMismatch { expected: vec![w, f], got: vec![window.len()] });
        }
        let probs = self.forward(window)?;
        Ok((MotionClass::new(argmax(&probs) as i64)?, probs))
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map(|l| l.output).unwrap_or(Shape::Flat(0))
    }
}
