//! Online inference over a frame stream with a rolling window.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::ingest::SOURCE_FPS;
use crate::nn::Model;
use crate::preprocess::{FeatureWindow, Preprocessor};
use crate::skeleton::{FrameRecord, MotionClass, SLOTS};

#[derive(Debug, Clone, PartialEq)]
pub enum StreamOutput {
    /// Fewer than `W` frames seen so far in this video.
    InsufficientHistory,
    Predicted { class: MotionClass, confidence: f32 },
}

/// Feeds frames one at a time, keeping the last `W` preprocessed frames.
/// Frames dropped by frame-rate decimation produce no output; a new video
/// id resets the window.
pub struct StreamingPredictor<'a> {
    model: &'a Model<f32>,
    preprocessor: Preprocessor,
    step: u64,
    window_len: usize,
    width: usize,
    video_id: Option<String>,
    rows: VecDeque<(Vec<f32>, [bool; SLOTS])>,
    buffer: Vec<f32>,
}

impl<'a> StreamingPredictor<'a> {
    pub fn new(model: &'a Model<f32>) -> Result<Self> {
        let manifest = &model.manifest;
        let fps = manifest.fps;
        if fps == 0 || SOURCE_FPS % fps != 0 {
            return Err(Error::NonDivisorRate { source_fps: SOURCE_FPS, target: fps });
        }
        let preprocessor = Preprocessor::new(manifest.preprocess)?;
        let width = preprocessor.config.feature_len();
        if model.spec.input_shape != (manifest.window_len, width) {
            return Err(Error::ShapeMismatch {
                expected: vec![model.spec.input_shape.0, model.spec.input_shape.1],
                got: vec![manifest.window_len, width],
            });
        }
        Ok(StreamingPredictor {
            model,
            preprocessor,
            step: u64::from(SOURCE_FPS / fps),
            window_len: manifest.window_len,
            width,
            video_id: None,
            rows: VecDeque::with_capacity(manifest.window_len),
            buffer: vec![0.0; manifest.window_len * width],
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    /// `None` when the frame is skipped by decimation.
    pub fn push(&mut self, frame: &FrameRecord) -> Result<Option<StreamOutput>> {
        if self.video_id.as_deref() != Some(frame.video_id.as_str()) {
            self.video_id = Some(frame.video_id.clone());
            self.rows.clear();
        }
        if frame.frame_index % self.step != 0 {
            return Ok(None);
        }
        let mut row = if self.rows.len() == self.window_len {
            self.rows.pop_front().expect("full window").0
        } else {
            vec![0.0; self.width]
        };
        let mask = self.preprocessor.frame_features(frame, &mut row);
        self.rows.push_back((row, mask));
        if self.rows.len() < self.window_len {
            return Ok(Some(StreamOutput::InsufficientHistory));
        }
        for (dst, (row, _)) in self.buffer.chunks_exact_mut(self.width).zip(&self.rows) {
            dst.copy_from_slice(row);
        }
        let mut window = FeatureWindow {
            rows: self.window_len,
            reduction: self.preprocessor.config.reduce,
            values: std::mem::take(&mut self.buffer),
            imputed: self.rows.iter().map(|(_, m)| *m).collect(),
        };
        self.preprocessor.finish_window(&mut window);
        let result = self.model.predict(&window.values);
        self.buffer = window.values;
        let (class, probs) = result?;
        Ok(Some(StreamOutput::Predicted { class, confidence: probs[class.index()] }))
    }
}
