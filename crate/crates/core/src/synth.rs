//! Deterministic synthetic two-hand skeleton streams with known ground truth.
//!
//! Each motion class has a prototype: where the hands work, how fast and
//! how far they oscillate, and how the fingers are curled and the wrists
//! turned. Workers perform the classes in a fixed cyclic order with their
//! own tempo, amplitude, noise and style, interrupted by occasional error
//! bursts (class 0). Detections drop out per hand slot and handedness is
//! sometimes mislabeled, as with a real landmark extractor.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_label_table, write_skeleton_file, LabelTable, VideoStream};
use crate::skeleton::{FrameRecord, HandObservation, Handedness, Landmark, MotionClass, LANDMARKS_PER_HAND, NUM_CLASSES};

/// Articulation of one hand: curl per finger (thumb to pinky, 0 = straight,
/// 1 = fully folded) and in-plane wrist rotation in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Articulation {
    pub curl: [f64; 5],
    pub wrist_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototype {
    /// Right-hand workspace center in image coordinates.
    pub center: (f64, f64),
    pub frequency_hz: f64,
    pub amplitude: f64,
    /// Depth offset of the fingertips relative to the wrist.
    pub depth: f64,
    pub right: Articulation,
    pub left: Articulation,
    pub mean_duration_s: f64,
    /// Durations are uniform in `mean · (1 ± jitter)`.
    pub duration_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub id: String,
    pub speed: f64,
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub wrist_offset_deg: f64,
    /// Multiplies the spec's error-burst probability.
    pub error_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub fps: u32,
    pub duration_s: f64,
    pub videos_per_worker: usize,
    pub prototypes: Vec<ClassPrototype>,
    /// Class order of one work cycle. Repeating a class repeats the step.
    pub grammar: Vec<u8>,
    /// Probability of an error burst after each grammar step.
    pub error_prob: f64,
    pub dropout: f64,
    pub mislabel_prob: f64,
    /// Frames over which the articulation blends into the next class.
    pub blend_frames: usize,
    pub hand_size: f64,
    pub workers: Vec<WorkerProfile>,
    pub holdout_worker: Option<String>,
}

fn art(curl: [f64; 5], wrist_deg: f64) -> Articulation {
    Articulation { curl, wrist_deg }
}

fn default_prototypes() -> Vec<ClassPrototype> {
    #[rustfmt::skip]
    let table: [((f64, f64), f64, f64, f64, Articulation, Articulation, f64); NUM_CLASSES] = [
        ((0.50, 0.50), 3.0, 0.03, 0.00, art([0.5, 0.5, 0.5, 0.5, 0.5], 180.0), art([0.5, 0.5, 0.5, 0.5, 0.5], 180.0), 1.0),
        ((0.70, 0.30), 0.5, 0.05, 0.02, art([0.1, 0.1, 0.1, 0.1, 0.1], 0.0), art([0.9, 0.9, 0.9, 0.9, 0.9], 20.0), 2.2),
        ((0.65, 0.45), 0.8, 0.04, -0.02, art([0.9, 0.1, 0.1, 0.9, 0.9], 30.0), art([0.1, 0.1, 0.1, 0.1, 0.1], -30.0), 1.8),
        ((0.60, 0.60), 0.6, 0.06, 0.03, art([0.2, 0.9, 0.9, 0.9, 0.9], -30.0), art([0.5, 0.2, 0.2, 0.2, 0.8], 0.0), 2.0),
        ((0.55, 0.70), 1.0, 0.03, -0.03, art([0.8, 0.8, 0.2, 0.2, 0.2], 60.0), art([0.9, 0.1, 0.9, 0.1, 0.9], 45.0), 1.6),
        ((0.75, 0.55), 0.4, 0.07, 0.01, art([0.1, 0.1, 0.9, 0.9, 0.9], -60.0), art([0.2, 0.2, 0.2, 0.9, 0.9], -60.0), 2.4),
        ((0.80, 0.40), 1.2, 0.04, -0.01, art([0.6, 0.3, 0.3, 0.3, 0.6], 90.0), art([0.7, 0.7, 0.7, 0.1, 0.1], 90.0), 1.7),
        ((0.68, 0.75), 0.7, 0.05, 0.04, art([0.9, 0.9, 0.9, 0.1, 0.1], -90.0), art([0.1, 0.9, 0.9, 0.9, 0.1], -90.0), 2.1),
        ((0.58, 0.35), 0.9, 0.03, -0.04, art([0.3, 0.6, 0.9, 0.6, 0.3], 120.0), art([0.4, 0.4, 0.4, 0.4, 0.4], 135.0), 1.9),
        ((0.72, 0.65), 0.5, 0.06, 0.02, art([0.5, 0.1, 0.5, 0.1, 0.5], -120.0), art([0.9, 0.5, 0.1, 0.5, 0.9], -135.0), 2.3),
    ];
    table
        .iter()
        .map(|&(center, frequency_hz, amplitude, depth, right, left, mean_duration_s)| ClassPrototype {
            center,
            frequency_hz,
            amplitude,
            depth,
            right,
            left,
            mean_duration_s,
            duration_jitter: 0.15,
        })
        .collect()
}

/// Nine worker presets. `w4` is sloppy (fast, wide, noisy, error-prone);
/// `w9` is the default holdout worker.
pub fn default_workers(n: usize) -> Vec<WorkerProfile> {
    const SPEED: [f64; 9] = [1.0, 0.92, 1.08, 1.3, 0.96, 1.04, 0.9, 1.1, 1.0];
    const AMPLITUDE: [f64; 9] = [1.0, 1.1, 0.9, 1.4, 1.05, 0.95, 1.0, 1.15, 0.9];
    const NOISE: [f64; 9] = [0.002, 0.002, 0.0025, 0.006, 0.002, 0.0025, 0.002, 0.0025, 0.0025];
    const WRIST: [f64; 9] = [0.0, 4.0, -4.0, 10.0, 2.0, -3.0, 5.0, -5.0, 3.0];
    const ERRORS: [f64; 9] = [1.0, 1.0, 1.0, 2.5, 1.0, 1.0, 1.0, 1.0, 1.0];
    (0..n)
        .map(|i| {
            let k = i % 9;
            WorkerProfile {
                id: format!("w{}", i + 1),
                speed: SPEED[k],
                amplitude: AMPLITUDE[k],
                noise_sigma: NOISE[k],
                wrist_offset_deg: WRIST[k],
                error_scale: ERRORS[k],
            }
        })
        .collect()
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec::with_workers(9)
    }
}

impl SynthSpec {
    pub fn with_workers(n: usize) -> Self {
        let workers = default_workers(n);
        SynthSpec {
            fps: 30,
            duration_s: 180.0,
            videos_per_worker: 1,
            prototypes: default_prototypes(),
            grammar: (1..=9).collect(),
            error_prob: 0.08,
            dropout: 0.1,
            mislabel_prob: 0.02,
            blend_frames: 4,
            hand_size: 0.09,
            holdout_worker: workers.last().map(|w| w.id.clone()),
            workers,
        }
    }

    /// Parses TOML; omitted keys take their default values.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SynthSpec = toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string().trim_end().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn n_workers(&self) -> usize {
        self.workers.len()
    }

    /// The class whose segment starts delimit work cycles.
    pub fn anchor_class(&self) -> MotionClass {
        MotionClass::new(i64::from(self.grammar[0])).expect("validated grammar")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if self.fps == 0 || !(self.duration_s > 0.0) || self.videos_per_worker == 0 {
            return bad("fps, duration_s and videos_per_worker must be positive".into());
        }
        if self.workers.is_empty() {
            return bad("at least one worker is required".into());
        }
        if self.prototypes.len() != NUM_CLASSES {
            return bad(format!("expected {NUM_CLASSES} class prototypes, got {}", self.prototypes.len()));
        }
        if self.grammar.is_empty() || self.grammar.iter().any(|&c| c == 0 || c as usize >= NUM_CLASSES) {
            return bad("grammar must list classes 1..=9 and be non-empty".into());
        }
        if !prob(self.error_prob) || !prob(self.dropout) || !prob(self.mislabel_prob) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if !(self.hand_size > 0.0) {
            return bad("hand_size must be positive".into());
        }
        for (c, p) in self.prototypes.iter().enumerate() {
            if !(p.mean_duration_s > 0.0) || !(p.frequency_hz > 0.0) || !(0.0..1.0).contains(&p.duration_jitter) {
                return bad(format!("class {c}: durations and frequencies must be positive, jitter in [0, 1)"));
            }
        }
        for w in &self.workers {
            if !(w.speed > 0.0) || !(w.amplitude >= 0.0) || !(w.noise_sigma >= 0.0) || !(w.error_scale >= 0.0) {
                return bad(format!("worker {}: invalid jitter", w.id));
            }
            if !prob(self.error_prob * w.error_scale) {
                return bad(format!("worker {}: scaled error probability exceeds 1", w.id));
            }
        }
        let mut ids: Vec<&str> = self.workers.iter().map(|w| w.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("worker ids must be unique".into());
        }
        Ok(())
    }
}

/// One labeled run of a class, `start..=end` in source frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueSegment {
    pub class: MotionClass,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueCycle {
    pub start: u64,
    pub next_start: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub stream: VideoStream,
    pub labels: LabelTable,
    pub segments: Vec<TrueSegment>,
    pub cycles: Vec<TrueCycle>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub seed: u64,
    pub videos: Vec<SynthVideo>,
}

impl SynthDataset {
    pub fn streams(&self) -> Vec<VideoStream> {
        self.videos.iter().map(|v| v.stream.clone()).collect()
    }

    pub fn holdout_workers(&self) -> Vec<String> {
        self.spec.holdout_worker.iter().cloned().collect()
    }
}

/// Planned steps: class and length in frames.
fn plan_segments(spec: &SynthSpec, worker: &WorkerProfile, rng: &mut ChaCha8Rng) -> Vec<(MotionClass, u64)> {
    let total = (spec.duration_s * f64::from(spec.fps)).round() as u64;
    let draw = |class: usize, rng: &mut ChaCha8Rng| {
        let p = &spec.prototypes[class];
        let factor = 1.0 + p.duration_jitter * rng.random_range(-1.0..=1.0);
        let frames = (p.mean_duration_s * factor / worker.speed * f64::from(spec.fps)).round();
        frames.max(1.0) as u64
    };
    let p_err = spec.error_prob * worker.error_scale;
    let mut steps = Vec::new();
    let mut used = 0u64;
    'outer: loop {
        for &c in &spec.grammar {
            let len = draw(c as usize, rng);
            steps.push((MotionClass::new(i64::from(c)).unwrap(), len));
            used += len;
            if used >= total {
                break 'outer;
            }
            if rng.random_bool(p_err) {
                let len = draw(0, rng);
                steps.push((MotionClass::ERROR, len));
                used += len;
                if used >= total {
                    break 'outer;
                }
            }
        }
    }
    let overshoot = used - total;
    if let Some(last) = steps.last_mut() {
        last.1 -= overshoot;
        if last.1 == 0 {
            steps.pop();
        }
    }
    steps
}

/// Articulated 21-landmark hand around `pos`, mirrored for the left hand.
fn hand_landmarks(a: &Articulation, pos: (f64, f64), size: f64, depth: f64, left: bool) -> [Landmark; LANDMARKS_PER_HAND] {
    const FINGER_DEG: [f64; 5] = [-55.0, -18.0, 0.0, 16.0, 34.0];
    const BASE: [f64; 5] = [0.25, 0.48, 0.5, 0.47, 0.42];
    const SEGMENTS: [[f64; 3]; 5] =
        [[0.22, 0.18, 0.15], [0.26, 0.16, 0.13], [0.29, 0.18, 0.14], [0.26, 0.17, 0.13], [0.2, 0.13, 0.11]];
    let mirror = if left { -1.0 } else { 1.0 };
    let rot = a.wrist_deg.to_radians() * mirror;
    let (sr, cr) = rot.sin_cos();
    let place = |lx: f64, ly: f64, lz: f64| {
        // local y points up the hand, image y grows downwards
        let (x, y) = (lx * mirror, -ly);
        let (rx, ry) = (x * cr - y * sr, x * sr + y * cr);
        Landmark::new((pos.0 + size * rx) as f32, (pos.1 + size * ry) as f32, (size * lz) as f32)
    };
    let mut out = [Landmark::default(); LANDMARKS_PER_HAND];
    out[0] = place(0.0, 0.0, 0.0);
    for f in 0..5 {
        let theta = FINGER_DEG[f].to_radians();
        let (ux, uy) = (theta.sin(), theta.cos());
        let (mut x, mut y, mut z) = (BASE[f] * ux, BASE[f] * uy, 0.0);
        let base = 1 + 4 * f;
        out[base] = place(x, y, z);
        let mut bend = 0.0;
        for (j, &len) in SEGMENTS[f].iter().enumerate() {
            bend += a.curl[f].clamp(0.0, 1.2) * 50f64.to_radians();
            x += len * bend.cos() * ux;
            y += len * bend.cos() * uy;
            z -= len * bend.sin() + depth * (j + 1) as f64 / 3.0;
            out[base + 1 + j] = place(x, y, z);
        }
    }
    out
}

struct Pose {
    right: Articulation,
    left: Articulation,
    right_pos: (f64, f64),
    left_pos: (f64, f64),
    depth: f64,
}

fn class_pose(p: &ClassPrototype, worker: &WorkerProfile, t: f64) -> Pose {
    let phase = 2.0 * PI * p.frequency_hz * worker.speed * t;
    let amp = p.amplitude * worker.amplitude;
    let wiggle = 0.12 * phase.sin();
    let style = |a: &Articulation, sign: f64| Articulation {
        curl: a.curl.map(|c| (c + wiggle * sign).clamp(0.0, 1.0)),
        wrist_deg: a.wrist_deg + worker.wrist_offset_deg + 8.0 * (0.5 * phase).sin(),
    };
    let right_pos = (p.center.0 + amp * phase.sin(), p.center.1 + 0.5 * amp * (2.0 * phase).sin());
    let left_pos = (1.0 - p.center.0 - 0.6 * amp * phase.cos(), p.center.1 + 0.4 * amp * phase.sin());
    Pose { right: style(&p.right, 1.0), left: style(&p.left, -1.0), right_pos, left_pos, depth: p.depth }
}

fn blend(a: &Pose, b: &Pose, w: f64) -> Pose {
    let lerp = |x: f64, y: f64| x + (y - x) * w;
    let art = |x: &Articulation, y: &Articulation| Articulation {
        curl: std::array::from_fn(|i| lerp(x.curl[i], y.curl[i])),
        wrist_deg: lerp(x.wrist_deg, y.wrist_deg),
    };
    Pose {
        right: art(&a.right, &b.right),
        left: art(&a.left, &b.left),
        right_pos: (lerp(a.right_pos.0, b.right_pos.0), lerp(a.right_pos.1, b.right_pos.1)),
        left_pos: (lerp(a.left_pos.0, b.left_pos.0), lerp(a.left_pos.1, b.left_pos.1)),
        depth: lerp(a.depth, b.depth),
    }
}

fn generate_video(spec: &SynthSpec, worker: &WorkerProfile, video_id: String, seed: u64, stream: u64) -> SynthVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let steps = plan_segments(spec, worker, &mut rng);
    let noise = Normal::new(0.0, worker.noise_sigma.max(0.0)).unwrap();
    let fps = f64::from(spec.fps);

    let mut frames = Vec::new();
    let mut start = 0u64;
    let mut prev_class: Option<MotionClass> = None;
    for &(class, len) in &steps {
        let proto = &spec.prototypes[class.index()];
        for k in 0..len {
            let t = k as f64 / fps;
            let mut pose = class_pose(proto, worker, t);
            if let Some(prev) = prev_class.filter(|&p| p != class) {
                if (k as usize) < spec.blend_frames {
                    let from = class_pose(&spec.prototypes[prev.index()], worker, t);
                    pose = blend(&from, &pose, (k + 1) as f64 / (spec.blend_frames + 1) as f64);
                }
            }
            let mut hands = Vec::with_capacity(2);
            for (handedness, art, pos) in
                [(Handedness::Right, &pose.right, pose.right_pos), (Handedness::Left, &pose.left, pose.left_pos)]
            {
                if rng.random_bool(spec.dropout) {
                    continue;
                }
                let mut landmarks =
                    hand_landmarks(art, pos, spec.hand_size, pose.depth, handedness == Handedness::Left);
                if worker.noise_sigma > 0.0 {
                    for lm in landmarks.iter_mut() {
                        lm.x += noise.sample(&mut rng) as f32;
                        lm.y += noise.sample(&mut rng) as f32;
                        lm.z += noise.sample(&mut rng) as f32;
                    }
                }
                let (label, score) = if rng.random_bool(spec.mislabel_prob) {
                    (handedness.opposite(), rng.random_range(0.5..0.7))
                } else {
                    (handedness, rng.random_range(0.8..1.0))
                };
                hands.push(HandObservation {
                    landmarks,
                    handedness: label,
                    handedness_score: score,
                    detection_score: rng.random_range(0.7..1.0),
                });
            }
            if hands.len() == 2 && rng.random_bool(0.5) {
                hands.swap(0, 1);
            }
            let mut it = hands.into_iter();
            frames.push(FrameRecord {
                video_id: video_id.clone(),
                worker_id: worker.id.clone(),
                frame_index: start + k,
                slots: [it.next(), it.next()],
                label: Some(class),
            });
        }
        prev_class = Some(class);
        start += len;
    }

    let mut segments: Vec<TrueSegment> = Vec::new();
    let mut at = 0u64;
    for &(class, len) in &steps {
        match segments.last_mut() {
            Some(s) if s.class == class => s.end += len,
            _ => segments.push(TrueSegment { class, start: at, end: at + len - 1 }),
        }
        at += len;
    }
    let anchor = spec.anchor_class();
    let starts: Vec<u64> = segments.iter().filter(|s| s.class == anchor).map(|s| s.start).collect();
    let cycles = starts
        .windows(2)
        .map(|w| TrueCycle { start: w[0], next_start: w[1], seconds: (w[1] - w[0]) as f64 / fps })
        .collect();
    let labels = LabelTable::new(segments.iter().map(|s| (s.start, s.class)).collect()).expect("non-empty plan");
    SynthVideo {
        stream: VideoStream { video_id, worker_id: worker.id.clone(), frames },
        labels,
        segments,
        cycles,
    }
}

/// Generates every worker's videos. Identical `(spec, seed)` give identical
/// output; each video draws from its own generator stream.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> =
        (0..spec.workers.len()).flat_map(|w| (0..spec.videos_per_worker).map(move |v| (w, v))).collect();
    let videos = jobs
        .par_iter()
        .map(|&(w, v)| {
            let worker = &spec.workers[w];
            let id = format!("{}_v{}", worker.id, v + 1);
            generate_video(spec, worker, id, seed, (w * spec.videos_per_worker + v) as u64)
        })
        .collect();
    Ok(SynthDataset { spec: spec.clone(), seed, videos })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerExpectation {
    pub worker_id: String,
    /// Expected segment length per class in seconds (class 0 = error bursts).
    pub mean_duration_s: Vec<f64>,
    /// Expected time between successive anchor starts.
    pub cycle_s: f64,
    pub error_bursts_per_cycle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthExpectations {
    pub anchor_class: MotionClass,
    pub grammar: Vec<u8>,
    pub dropout_rate: f64,
    pub frames_per_video: u64,
    pub workers: Vec<WorkerExpectation>,
}

/// Analytic expectations for generator output.
pub fn describe(spec: &SynthSpec) -> Result<SynthExpectations> {
    spec.validate()?;
    let workers = spec
        .workers
        .iter()
        .map(|w| {
            let mean_duration_s: Vec<f64> = spec.prototypes.iter().map(|p| p.mean_duration_s / w.speed).collect();
            let bursts = spec.grammar.len() as f64 * spec.error_prob * w.error_scale;
            let steps: f64 = spec.grammar.iter().map(|&c| mean_duration_s[c as usize]).sum();
            WorkerExpectation {
                worker_id: w.id.clone(),
                cycle_s: steps + bursts * mean_duration_s[0],
                mean_duration_s,
                error_bursts_per_cycle: bursts,
            }
        })
        .collect();
    Ok(SynthExpectations {
        anchor_class: spec.anchor_class(),
        grammar: spec.grammar.clone(),
        dropout_rate: spec.dropout,
        frames_per_video: (spec.duration_s * f64::from(spec.fps)).round() as u64,
        workers,
    })
}

/// Writes `<video>.frames.csv` and `<video>.labels.csv` per video, plus
/// `ground_truth.csv` (segments) and `cycles.csv` (true cycle times).
pub fn write_dataset(data: &SynthDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for v in &data.videos {
        let id = &v.stream.video_id;
        write_skeleton_file(BufWriter::new(File::create(dir.join(format!("{id}.frames.csv")))?), &v.stream.frames)?;
        write_label_table(BufWriter::new(File::create(dir.join(format!("{id}.labels.csv")))?), &v.labels)?;
    }
    let mut gt = BufWriter::new(File::create(dir.join("ground_truth.csv"))?);
    writeln!(gt, "video_id,worker_id,class_id,start_frame,end_frame,duration_s")?;
    let fps = f64::from(data.spec.fps);
    for v in &data.videos {
        for s in &v.segments {
            let secs = (s.end + 1 - s.start) as f64 / fps;
            writeln!(gt, "{},{},{},{},{},{}", v.stream.video_id, v.stream.worker_id, s.class, s.start, s.end, secs)?;
        }
    }
    gt.flush()?;
    let mut cy = BufWriter::new(File::create(dir.join("cycles.csv"))?);
    writeln!(cy, "video_id,worker_id,anchor_class,start_frame,next_start_frame,cycle_s")?;
    for v in &data.videos {
        for c in &v.cycles {
            writeln!(
                cy,
                "{},{},{},{},{},{}",
                v.stream.video_id,
                v.stream.worker_id,
                data.spec.anchor_class(),
                c.start,
                c.next_start,
                c.seconds
            )?;
        }
    }
    cy.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::apply_labels;

    fn small() -> SynthSpec {
        let mut spec = SynthSpec::with_workers(3);
        spec.duration_s = 40.0;
        spec
    }

    #[test]
    fn default_spec_is_valid() {
        let spec = SynthSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.n_workers(), 9);
        assert_eq!(spec.holdout_worker.as_deref(), Some("w9"));
        assert_eq!(spec.anchor_class().id(), 1);
    }

    #[test]
    fn streams_are_gapless_and_consistent_with_tables() {
        let data = generate(&small(), 5).unwrap();
        for v in &data.videos {
            let n = v.stream.frames.len() as u64;
            assert_eq!(n, 1200);
            assert!(v.stream.frames.iter().enumerate().all(|(i, f)| f.frame_index == i as u64));
            let mut relabeled = v.stream.frames.clone();
            relabeled.iter_mut().for_each(|f| f.label = None);
            apply_labels(&mut relabeled, &v.labels).unwrap();
            assert_eq!(relabeled, v.stream.frames);
            assert_eq!(v.segments.last().unwrap().end + 1, n);
            assert!(v.segments.windows(2).all(|w| w[0].class != w[1].class && w[0].end + 1 == w[1].start));
        }
    }

    #[test]
    fn zero_dropout_keeps_every_slot() {
        let mut spec = small();
        spec.dropout = 0.0;
        let data = generate(&spec, 1).unwrap();
        assert!(data.videos.iter().flat_map(|v| &v.stream.frames).all(|f| f.present_hands() == 2));
    }

    #[test]
    fn workers_differ_and_seeds_reproduce() {
        let a = generate(&small(), 9).unwrap();
        let b = generate(&small(), 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.videos[0].stream.frames[..50], a.videos[1].stream.frames[..50]);
        let c = generate(&small(), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = small();
        spec.dropout = 1.5;
        assert!(matches!(generate(&spec, 0), Err(Error::InvalidSpec(_))));
        let mut spec = small();
        spec.prototypes[3].mean_duration_s = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = small();
        spec.grammar = vec![0, 1];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn describe_cycle_is_sum_of_means() {
        let mut spec = small();
        spec.error_prob = 0.0;
        let d = describe(&spec).unwrap();
        let w = &d.workers[0];
        let sum: f64 = (1..=9).map(|c| spec.prototypes[c].mean_duration_s / spec.workers[0].speed).sum();
        assert!((w.cycle_s - sum).abs() < 1e-12);
    }

    #[test]
    fn hands_stay_roughly_in_frame() {
        let data = generate(&small(), 2).unwrap();
        let outside: usize =
            data.videos.iter().flat_map(|v| &v.stream.frames).flat_map(|f| f.slots.iter().flatten()).map(|h| h.out_of_frame_points()).sum();
        assert_eq!(outside, 0);
    }
}
