//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use mpar_core::nn::{build_model, ConvStack, Model, ModelSpec, Padding};
use mpar_core::skeleton::{FrameRecord, HandObservation, Handedness, Landmark, MotionClass};
use mpar_core::search::{Config, Dimension, Domain, Objective, ParamSpace, TrialOutcome, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Denominator floor of the relative error. Central differences with
/// h = 1e-5 on a loss near ln 10 carry about 5e-11 of round-off, so smaller
/// gradients are compared against this scale instead of their own.
pub const GRAD_FLOOR: f64 = 1e-4;

pub const FD_STEP: f64 = 1e-5;

pub fn gradient_specs(input: (usize, usize)) -> Vec<(&'static str, ModelSpec)> {
    vec![
        ("td_dense", ModelSpec::td_dense(input, &[8, 8], &[16])),
        ("lstm", ModelSpec::lstm(input, &[8])),
        (
            "conv1d",
            ModelSpec::conv1d(
                input,
                &ConvStack {
                    layers: 2,
                    filters: 6,
                    kernel_size: 3,
                    stride: 2,
                    padding: Padding::Causal,
                    double_filters: false,
                    pool_sections: None,
                },
            ),
        ),
    ]
}

/// Mean loss of a double-precision model, straight from `forward`.
fn mean_loss(model: &Model<f64>, x: &[f64], labels: &[usize]) -> f64 {
    let probs = model.forward(x).unwrap();
    labels.iter().enumerate().map(|(b, &y)| -probs[b * 10 + y].max(1e-7).ln()).sum::<f64>() / labels.len() as f64
}

pub struct GradCheck {
    pub params: usize,
    pub max_rel_err: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares analytic gradients against central differences over every
/// parameter.
pub fn gradient_check(spec: &ModelSpec, seed: u64, batch: usize) -> GradCheck {
    let model = build_model::<f64>(spec, seed).unwrap();
    let (w, f) = spec.input_shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let x: Vec<f64> = (0..batch * w * f).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..10)).collect();
    let (_, _, grads) = model.loss_and_gradients(&x, &labels).unwrap();
    let analytic: Vec<f64> = grads.iter().flatten().flat_map(|t| t.data().iter().copied()).collect();

    let mut probe = model.clone();
    let mut out = GradCheck { params: analytic.len(), max_rel_err: 0.0, worst_analytic: 0.0, worst_numeric: 0.0 };
    for (k, &a) in analytic.iter().enumerate() {
        let orig = *probe.params_flat().nth(k).unwrap();
        *probe.params_flat_mut().nth(k).unwrap() = orig + FD_STEP;
        let up = mean_loss(&probe, &x, &labels);
        *probe.params_flat_mut().nth(k).unwrap() = orig - FD_STEP;
        let down = mean_loss(&probe, &x, &labels);
        *probe.params_flat_mut().nth(k).unwrap() = orig;
        let n = (up - down) / (2.0 * FD_STEP);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR);
        if rel > out.max_rel_err {
            out.max_rel_err = rel;
            out.worst_analytic = a;
            out.worst_numeric = n;
        }
    }
    out
}

/// Seeded response surface over a 10 × 10 × 4 × 5 grid (2,000 configs): a
/// quadratic bowl in two integer dimensions, random categorical effects, an
/// interaction between the bowl and one category, and hash noise.
pub struct Surface {
    pub optimum: (f64, f64),
    pub curvature: (f64, f64),
    pub kind_effect: [f64; 4],
    pub size_effect: [f64; 5],
    pub interaction: [f64; 4],
    pub seed: u64,
}

pub const SURFACE_KINDS: [&str; 4] = ["p", "q", "r", "s"];
pub const SURFACE_SIZES: [i64; 5] = [16, 32, 64, 128, 256];

impl Surface {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Surface {
            optimum: (rng.random_range(0.0..9.0), rng.random_range(0.0..9.0)),
            curvature: (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)),
            kind_effect: std::array::from_fn(|_| rng.random_range(0.0..0.3)),
            size_effect: std::array::from_fn(|_| rng.random_range(0.0..0.2)),
            interaction: std::array::from_fn(|_| rng.random_range(-0.02..0.02)),
            seed,
        }
    }

    pub fn score(&self, a: i64, b: i64, kind: usize, size: usize) -> f64 {
        let (da, db) = (a as f64 - self.optimum.0, b as f64 - self.optimum.1);
        let bowl = 1.0 - 0.01 * (self.curvature.0 * da * da + self.curvature.1 * db * db);
        let h = (self.seed ^ (a as u64) << 16 ^ (b as u64) << 8 ^ (kind as u64) << 4 ^ size as u64)
            .wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let noise = (h >> 40) as f64 / (1u64 << 24) as f64 * 0.01;
        let raw = bowl + self.kind_effect[kind] + self.size_effect[size] + self.interaction[kind] * da + noise;
        1.0 / (1.0 + (-3.0 * raw).exp())
    }

    /// Every grid score, best first.
    pub fn brute_force(&self) -> Vec<f64> {
        let mut all = Vec::with_capacity(2000);
        for a in 0..10 {
            for b in 0..10 {
                for k in 0..4 {
                    for s in 0..5 {
                        all.push(self.score(a, b, k, s));
                    }
                }
            }
        }
        all.sort_by(|x, y| y.total_cmp(x));
        all
    }
}

impl Surface {
    pub fn space() -> ParamSpace {
        ParamSpace {
            dims: vec![
                Dimension::new("a", Domain::IntRange { lo: 0, hi: 9 }),
                Dimension::new("b", Domain::IntRange { lo: 0, hi: 9 }),
                Dimension::new("kind", Domain::Categorical { options: SURFACE_KINDS.iter().map(|&k| Value::from(k)).collect() }),
                Dimension::new("size", Domain::Categorical { options: SURFACE_SIZES.iter().map(|&s| Value::Int(s)).collect() }),
            ],
        }
    }

    pub fn score_config(&self, c: &Config) -> f64 {
        let kind = SURFACE_KINDS.iter().position(|k| c["kind"].as_str() == Some(*k)).unwrap();
        let size = SURFACE_SIZES.iter().position(|s| c["size"].as_i64() == Some(*s)).unwrap();
        self.score(c["a"].as_i64().unwrap(), c["b"].as_i64().unwrap(), kind, size)
    }
}

impl Objective for Surface {
    fn evaluate(&self, config: &Config, _seed: u64) -> mpar_core::Result<TrialOutcome> {
        let acc = self.score_config(config);
        Ok(TrialOutcome { val_accuracy: acc, val_loss: 1.0 - acc, param_count: 0 })
    }
}

/// Confusion counts by scanning the pairs once per cell.
pub fn brute_confusion(preds: &[u8], labels: &[u8]) -> [[u64; 10]; 10] {
    let mut out = [[0u64; 10]; 10];
    for (t, row) in out.iter_mut().enumerate() {
        for (p, cell) in row.iter_mut().enumerate() {
            *cell = preds.iter().zip(labels).filter(|&(&a, &b)| a as usize == p && b as usize == t).count() as u64;
        }
    }
    out
}

/// Precision, recall, F1 and support of one class from raw pair counts.
pub fn brute_class_metrics(preds: &[u8], labels: &[u8], class: u8) -> (f64, f64, f64, u64) {
    let tp = preds.iter().zip(labels).filter(|&(&p, &t)| p == class && t == class).count() as u64;
    let fp = preds.iter().zip(labels).filter(|&(&p, &t)| p == class && t != class).count() as u64;
    let fn_ = preds.iter().zip(labels).filter(|&(&p, &t)| p != class && t == class).count() as u64;
    let div = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let precision = div(tp, tp + fp);
    let recall = div(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1, tp + fn_)
}

/// Every `(start, end)` slice of length `w` whose end sits on the hop grid
/// anchored at the first complete window.
pub fn naive_windows(len: usize, w: usize, hop: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for start in 0..len {
        let end = start + w - 1;
        if end < len && (end + 1 - w) % hop == 0 {
            out.push((start, end));
        }
    }
    out
}

pub fn random_hand(rng: &mut ChaCha8Rng, handedness: Handedness) -> HandObservation {
    let center = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(-0.1..0.1));
    let size: f32 = rng.random_range(0.05..0.3);
    let landmarks = std::array::from_fn(|_| {
        Landmark::new(
            center.0 + size * rng.random_range(-0.5..0.5f32),
            center.1 + size * rng.random_range(-0.5..0.5f32),
            center.2 + size * rng.random_range(-0.5..0.5f32),
        )
    });
    HandObservation { landmarks, handedness, handedness_score: 0.9, detection_score: 0.9 }
}

/// Frames with each slot absent with probability `dropout`.
pub fn random_frames(rng: &mut ChaCha8Rng, n: usize, dropout: f64) -> Vec<FrameRecord> {
    (0..n)
        .map(|i| FrameRecord {
            video_id: "v".into(),
            worker_id: "w".into(),
            frame_index: i as u64,
            slots: [
                (!rng.random_bool(dropout)).then(|| random_hand(rng, Handedness::Left)),
                (!rng.random_bool(dropout)).then(|| random_hand(rng, Handedness::Right)),
            ],
            label: Some(MotionClass::new(rng.random_range(0..10)).unwrap()),
        })
        .collect()
}

/// Applies `p -> p * scale + shift` to every landmark of every present hand.
pub fn transform_frames(frames: &[FrameRecord], scale: f64, shift: [f64; 3]) -> Vec<FrameRecord> {
    let mut out = frames.to_vec();
    for f in &mut out {
        for hand in f.slots.iter_mut().flatten() {
            for l in &mut hand.landmarks {
                l.x = (l.x as f64 * scale + shift[0]) as f32;
                l.y = (l.y as f64 * scale + shift[1]) as f32;
                l.z = (l.z as f64 * scale + shift[2]) as f32;
            }
        }
    }
    out
}
