//! End-to-end runs: split and window the data, cache features, train and
//! evaluate one configuration.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::FeatureCache;
use crate::error::{Error, Result};
use crate::ingest::{build_windows, emulate_fps, DatasetSplit, VideoStream, WindowParams, WindowSpan, SOURCE_FPS};
use crate::nn::{evaluate, train, Evaluation, Model, ModelSpec, TrainHistory};
use crate::preprocess::Preprocessor;

/// Split windows with their cached features.
pub struct PreparedData {
    pub split: DatasetSplit,
    pub cache: FeatureCache,
}

impl PreparedData {
    pub fn new(videos: &[VideoStream], cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let split = DatasetSplit::build(videos, &cfg.split_options())?;
        let cache = FeatureCache::from_split(&split, Preprocessor::new(cfg.preprocess)?, cfg.window.length, cfg.window.fps);
        Ok(PreparedData { split, cache })
    }
}

/// Per-window prediction, identified by the window's last frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub video_id: String,
    pub worker_id: String,
    pub frame_index: u64,
    pub label: u8,
    pub predicted: u8,
}

pub fn frame_predictions(split: &DatasetSplit, spans: &[WindowSpan], eval: &Evaluation) -> Vec<FramePrediction> {
    spans
        .iter()
        .zip(eval.predictions.iter().zip(&eval.labels))
        .map(|(s, (&predicted, &label))| {
            let stream = &split.streams[s.video];
            FramePrediction {
                video_id: stream.video_id.clone(),
                worker_id: stream.worker_id.clone(),
                frame_index: s.end_frame,
                label,
                predicted,
            }
        })
        .collect()
}

pub struct PipelineOutcome {
    pub spec: ModelSpec,
    pub model: Model<f32>,
    pub history: TrainHistory,
    pub val: Option<Evaluation>,
    pub holdout: Option<Evaluation>,
    pub train_windows: usize,
    pub wall_time_s: f64,
}

impl PipelineOutcome {
    pub fn val_predictions(&self, data: &PreparedData) -> Vec<FramePrediction> {
        self.val.as_ref().map_or_else(Vec::new, |e| frame_predictions(&data.split, &data.split.val, e))
    }

    pub fn holdout_predictions(&self, data: &PreparedData) -> Vec<FramePrediction> {
        self.holdout.as_ref().map_or_else(Vec::new, |e| frame_predictions(&data.split, &data.split.holdout, e))
    }
}

const EVAL_BATCH: usize = 256;

/// Trains `cfg`'s model on prepared data and evaluates it on the
/// validation and holdout windows.
pub fn run_prepared(data: &PreparedData, cfg: &RunConfig) -> Result<PipelineOutcome> {
    let started = Instant::now();
    let spec = cfg.model_spec()?;
    if data.split.train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let train_view = data.cache.view(&data.split.train);
    let val_view = data.cache.view(&data.split.val);
    let (model, history) = train(&spec, &train_view, &val_view, &cfg.train_config())?;
    let val = (!data.split.val.is_empty()).then(|| evaluate(&model, &val_view, EVAL_BATCH)).transpose()?;
    let holdout = (!data.split.holdout.is_empty())
        .then(|| evaluate(&model, &data.cache.view(&data.split.holdout), EVAL_BATCH))
        .transpose()?;
    Ok(PipelineOutcome {
        spec,
        model,
        history,
        val,
        holdout,
        train_windows: data.split.train.len(),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

pub fn run(videos: &[VideoStream], cfg: &RunConfig) -> Result<PipelineOutcome> {
    run_prepared(&PreparedData::new(videos, cfg)?, cfg)
}

/// Evaluates a trained model on every window of whole streams at the
/// model's own frame rate, window length and preprocessing. Frames must be
/// labeled; videos shorter than one window are skipped.
pub fn evaluate_streams(model: &Model<f32>, videos: &[VideoStream], hop: usize) -> Result<(Vec<FramePrediction>, Evaluation)> {
    let m = &model.manifest;
    let params = WindowParams { window_len: m.window_len, hop, fps: m.fps, max_history_s: None };
    params.check()?;
    let mut streams = Vec::with_capacity(videos.len());
    let mut spans = Vec::new();
    for v in videos {
        let frames = emulate_fps(&v.frames, SOURCE_FPS, m.fps)?;
        if frames.iter().any(|f| f.label.is_none()) {
            return Err(Error::InvalidConfig(format!("video {} has unlabeled frames", v.video_id)));
        }
        if frames.len() >= m.window_len {
            spans.extend(build_windows(&frames, streams.len(), &params)?);
        } else {
            log::warn!("video {} is shorter than one window after downsampling; skipped", v.video_id);
        }
        streams.push(VideoStream { video_id: v.video_id.clone(), worker_id: v.worker_id.clone(), frames });
    }
    if spans.is_empty() {
        return Err(Error::InvalidConfig("no complete window in the evaluation data".into()));
    }
    let cache = FeatureCache::new(&streams, Preprocessor::new(m.preprocess)?, m.window_len, m.fps);
    let eval = evaluate(model, &cache.view(&spans), EVAL_BATCH)?;
    let rows = spans
        .iter()
        .zip(eval.predictions.iter().zip(&eval.labels))
        .map(|(s, (&predicted, &label))| FramePrediction {
            video_id: streams[s.video].video_id.clone(),
            worker_id: streams[s.video].worker_id.clone(),
            frame_index: s.end_frame,
            label,
            predicted,
        })
        .collect();
    Ok((rows, eval))
}
