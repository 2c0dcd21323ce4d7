use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{argmax, build_model, loss, Gradients, Model};
use super::optim::{adam_step, AdamConfig, AdamState, PlateauConfig, PlateauScheduler};
use super::spec::ModelSpec;
use crate::dataset::InstanceSource;
use crate::error::{Error, Result};
use crate::skeleton::NUM_CLASSES;

/// Each batch is split into this many contiguous shards whose gradients
/// are computed in parallel and summed in shard order. The count is fixed so
/// results do not depend on the number of available threads.
const GRADIENT_SHARDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub plateau: PlateauConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 32,
            batch_size: 64,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.plateau.factor > 0.0 && self.plateau.factor < 1.0) {
            return bad(format!("plateau factor must lie in (0, 1), got {}", self.plateau.factor));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn read_csv<R: std::io::Read>(source: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(source);
        let epochs = reader
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| Error::MalformedRow { line: i as u64 + 2, reason: e.to_string() }))
            .collect::<Result<Vec<EpochRecord>>>()?;
        Ok(TrainHistory { epochs })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,train_accuracy,val_loss,val_accuracy,learning_rate")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                opt(e.val_loss),
                opt(e.val_accuracy),
                e.learning_rate
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<u8>,
    pub labels: Vec<u8>,
}

fn gather(source: &dyn InstanceSource, indices: &[usize], buf: &mut Vec<f32>) -> Vec<usize> {
    let n = source.window_len() * source.feature_len();
    buf.resize(indices.len() * n, 0.0);
    buf.par_chunks_mut(n).zip(indices.par_iter()).for_each(|(out, &i)| source.write_features(i, out));
    indices.iter().map(|&i| source.label(i).index()).collect()
}

/// Forward pass over a whole source in fixed-size batches.
pub fn evaluate(model: &Model<f32>, source: &dyn InstanceSource, batch_size: usize) -> Result<Evaluation> {
    let n = source.len();
    let indices: Vec<usize> = (0..n).collect();
    let per_batch: Vec<Result<(f64, Vec<u8>, Vec<u8>)>> = indices
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let mut buf = Vec::new();
            let labels = gather(source, chunk, &mut buf);
            let probs = model.forward(&buf)?;
            let l = loss(&probs, &labels) as f64 * chunk.len() as f64;
            let preds = probs.chunks_exact(NUM_CLASSES).map(|p| argmax(p) as u8).collect();
            Ok((l, preds, labels.iter().map(|&y| y as u8).collect()))
        })
        .collect();
    let mut total = 0.0;
    let mut predictions = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for r in per_batch {
        let (l, p, y) = r?;
        total += l;
        predictions.extend(p);
        labels.extend(y);
    }
    let correct = predictions.iter().zip(&labels).filter(|(a, b)| a == b).count();
    let denom = n.max(1) as f64;
    Ok(Evaluation { loss: total / denom, accuracy: correct as f64 / denom, predictions, labels })
}

/// Mean loss and gradients over a batch, computed shard-parallel and
/// reduced in a fixed order.
fn batch_gradients(model: &Model<f32>, batch: &[f32], labels: &[usize]) -> Result<(Vec<f32>, f64, Gradients<f32>)> {
    let b = labels.len();
    let per_sample = model.input_len();
    let shard = b.div_ceil(GRADIENT_SHARDS.min(b));
    let parts: Vec<Result<(Vec<f32>, f32, Gradients<f32>)>> = labels
        .par_chunks(shard)
        .zip(batch.par_chunks(shard * per_sample))
        .map(|(y, x)| model.loss_and_gradients(x, y))
        .collect();
    let mut probs = Vec::with_capacity(b * NUM_CLASSES);
    let mut total_loss = 0.0f64;
    let mut acc: Option<Gradients<f32>> = None;
    for (k, part) in parts.into_iter().enumerate() {
        let (p, l, g) = part?;
        let rows = labels[k * shard..].len().min(shard);
        let w = rows as f32 / b as f32;
        total_loss += l as f64 * rows as f64;
        probs.extend(p);
        match acc.as_mut() {
            None => {
                let mut g = g;
                g.iter_mut().flatten().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= w));
                acc = Some(g);
            }
            Some(a) => {
                for (ta, tg) in a.iter_mut().flatten().zip(g.iter().flatten()) {
                    for (x, &y) in ta.data_mut().iter_mut().zip(tg.data()) {
                        *x += w * y;
                    }
                }
            }
        }
    }
    Ok((probs, total_loss / b as f64, acc.expect("non-empty batch")))
}

/// Mini-batch Adam training with plateau learning-rate reduction on the
/// validation loss (training loss when there is no validation set).
///
/// Shuffle order comes from a generator seeded with `config.seed`, so two
/// runs with equal inputs produce identical models and histories.
pub fn train(
    spec: &ModelSpec,
    train_set: &dyn InstanceSource,
    val_set: &dyn InstanceSource,
    config: &TrainConfig,
) -> Result<(Model<f32>, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let expect = [spec.input_shape.0, spec.input_shape.1];
    let got = [train_set.window_len(), train_set.feature_len()];
    if expect != got {
        return Err(Error::ShapeMismatch { expected: expect.to_vec(), got: got.to_vec() });
    }
    let mut model = build_model::<f32>(spec, config.seed)?;
    if let Some(m) = train_set.manifest() {
        model.manifest = m;
    }
    let mut state = AdamState::new(&model);
    let mut plateau = PlateauScheduler::new(config.plateau);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f5a_u64);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut lr = config.learning_rate;
    let mut history = TrainHistory::default();
    let mut buf = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let labels = gather(train_set, chunk, &mut buf);
            let (probs, l, grads) = batch_gradients(&model, &buf, &labels)?;
            loss_sum += l * chunk.len() as f64;
            correct += probs
                .chunks_exact(NUM_CLASSES)
                .zip(&labels)
                .filter(|(p, &y)| argmax(p) == y)
                .count();
            adam_step(&mut model, &grads, &mut state, lr, &config.adam);
        }
        let n = train_set.len() as f64;
        let (train_loss, train_accuracy) = (loss_sum / n, correct as f64 / n);
        let val = if val_set.is_empty() { None } else { Some(evaluate(&model, val_set, 256)?) };
        let record = EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            val_loss: val.as_ref().map(|v| v.loss),
            val_accuracy: val.as_ref().map(|v| v.accuracy),
            learning_rate: lr,
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.4} acc {:.4} val_loss {} val_acc {} lr {:.2e}",
            config.epochs,
            train_loss,
            train_accuracy,
            record.val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            record.val_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
            lr
        );
        history.epochs.push(record);
        lr = plateau.step(record.val_loss.unwrap_or(train_loss), lr);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InstanceWindow;
    use crate::preprocess::FeatureWindow;
    use crate::skeleton::{MotionClass, Reduction};

    /// Two linearly separable classes on CenterOfGravity-sized inputs.
    fn toy(n: usize) -> Vec<InstanceWindow> {
        (0..n)
            .map(|i| {
                let class = (i % 2) as i64 * 3;
                let sign = if class == 0 { -1.0 } else { 1.0 };
                let values: Vec<f32> = (0..4 * 6).map(|k| sign * 0.5 + 0.01 * ((i * 7 + k) % 5) as f32).collect();
                InstanceWindow {
                    features: FeatureWindow { rows: 4, reduction: Reduction::CenterOfGravity, values, imputed: vec![[false; 2]; 4] },
                    label: MotionClass::new(class).unwrap(),
                    end_frame: i as u64,
                    video_id: "v".into(),
                    worker_id: "w".into(),
                }
            })
            .collect()
    }

    #[test]
    fn history_csv_round_trips() {
        let h = TrainHistory {
            epochs: vec![
                EpochRecord { epoch: 1, train_loss: 1.5, train_accuracy: 0.25, val_loss: Some(1.25), val_accuracy: Some(0.5), learning_rate: 1e-3 },
                EpochRecord { epoch: 2, train_loss: 0.5, train_accuracy: 0.75, val_loss: None, val_accuracy: None, learning_rate: 1e-4 },
            ],
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(TrainHistory::read_csv(buf.as_slice()).unwrap(), h);
    }

    #[test]
    fn learns_separable_toy_and_is_deterministic() {
        let data = toy(64);
        let spec = ModelSpec::td_dense((4, 6), &[8], &[8]);
        let cfg = TrainConfig { learning_rate: 1e-2, epochs: 15, batch_size: 16, seed: 3, ..TrainConfig::default() };
        let (m1, h1) = train(&spec, &data, &data, &cfg).unwrap();
        let (m2, h2) = train(&spec, &data, &data, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert!(m1.params_flat().zip(m2.params_flat()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(h1.epochs.len(), 15);
        assert!(h1.epochs.last().unwrap().val_accuracy.unwrap() == 1.0);
    }

    #[test]
    fn empty_train_set_is_rejected() {
        let spec = ModelSpec::td_dense((4, 6), &[8], &[8]);
        let empty: Vec<InstanceWindow> = vec![];
        assert!(matches!(
            train(&spec, &empty, &empty, &TrainConfig::default()),
            Err(Error::EmptyTrainSet)
        ));
    }

    #[test]
    fn input_shape_must_match() {
        let spec = ModelSpec::td_dense((5, 6), &[8], &[8]);
        let data = toy(4);
        assert!(matches!(
            train(&spec, &data, &data, &TrainConfig::default()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn sharded_gradients_equal_full_batch() {
        let data = toy(10);
        let spec = ModelSpec::lstm((4, 6), &[3]);
        let model = build_model::<f32>(&spec, 5).unwrap();
        let mut buf = Vec::new();
        let idx: Vec<usize> = (0..10).collect();
        let labels = gather(&data, &idx, &mut buf);
        let (_, l_full, g_full) = model.loss_and_gradients(&buf, &labels).unwrap();
        let (_, l_shard, g_shard) = batch_gradients(&model, &buf, &labels).unwrap();
        assert!((l_full as f64 - l_shard).abs() < 1e-6);
        for (a, b) in g_full.iter().flatten().zip(g_shard.iter().flatten()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
