//! Training instances: preprocessed windows, either materialized one by one
//! or served lazily from per-frame feature caches.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{DatasetSplit, VideoStream, WindowSpan};
use crate::nn::PipelineManifest;
use crate::preprocess::{FeatureWindow, NormalizeReport, Preprocessor};
use crate::skeleton::{MotionClass, SLOTS};

/// `W` consecutive preprocessed frames of one video, labeled by the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceWindow {
    pub features: FeatureWindow,
    pub label: MotionClass,
    pub end_frame: u64,
    pub video_id: String,
    pub worker_id: String,
}

impl InstanceWindow {
    pub fn window_len(&self) -> usize {
        self.features.rows
    }

    pub fn feature_len(&self) -> usize {
        self.features.width()
    }

    pub fn imputed_mask(&self) -> &[[bool; SLOTS]] {
        &self.features.imputed
    }
}

/// Anything the trainer can draw fixed-shape labeled instances from.
pub trait InstanceSource: Sync {
    fn len(&self) -> usize;
    fn window_len(&self) -> usize;
    fn feature_len(&self) -> usize;
    fn label(&self, i: usize) -> MotionClass;
    /// Writes instance `i` as `window_len × feature_len` row-major values.
    fn write_features(&self, i: usize, out: &mut [f32]);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn manifest(&self) -> Option<PipelineManifest> {
        None
    }
}

impl InstanceSource for Vec<InstanceWindow> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn window_len(&self) -> usize {
        self.first().map_or(0, InstanceWindow::window_len)
    }

    fn feature_len(&self) -> usize {
        self.first().map_or(0, InstanceWindow::feature_len)
    }

    fn label(&self, i: usize) -> MotionClass {
        self[i].label
    }

    fn write_features(&self, i: usize, out: &mut [f32]) {
        out.copy_from_slice(&self[i].features.values);
    }
}

/// Runs every layer over a window's raw frames.
pub fn materialize(
    span: &WindowSpan,
    stream: &VideoStream,
    preprocessor: &Preprocessor,
) -> Result<(InstanceWindow, NormalizeReport)> {
    let label = span
        .label
        .ok_or_else(|| Error::InvalidConfig(format!("window ending at frame {} is unlabeled", span.end_frame)))?;
    let (features, report) = preprocessor.window(span.frames(&stream.frames));
    Ok((
        InstanceWindow {
            features,
            label,
            end_frame: span.end_frame,
            video_id: stream.video_id.clone(),
            worker_id: stream.worker_id.clone(),
        },
        report,
    ))
}

/// Per-frame features of one stream (everything but window-relative
/// normalization).
#[derive(Debug, Clone)]
pub struct StreamFeatures {
    pub video_id: String,
    pub worker_id: String,
    pub values: Vec<f32>,
    pub imputed: Vec<[bool; SLOTS]>,
    pub labels: Vec<Option<MotionClass>>,
    pub frame_index: Vec<u64>,
}

/// Cached features for every stream of a split.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    pub preprocessor: Preprocessor,
    pub window_len: usize,
    pub fps: u32,
    pub streams: Vec<StreamFeatures>,
}

impl FeatureCache {
    pub fn new(streams: &[VideoStream], preprocessor: Preprocessor, window_len: usize, fps: u32) -> Self {
        let width = preprocessor.config.feature_len();
        let streams = streams
            .par_iter()
            .map(|s| {
                let mut values = vec![0.0; s.frames.len() * width];
                let imputed = s
                    .frames
                    .iter()
                    .zip(values.chunks_exact_mut(width))
                    .map(|(f, out)| preprocessor.frame_features(f, out))
                    .collect();
                StreamFeatures {
                    video_id: s.video_id.clone(),
                    worker_id: s.worker_id.clone(),
                    values,
                    imputed,
                    labels: s.frames.iter().map(|f| f.label).collect(),
                    frame_index: s.frames.iter().map(|f| f.frame_index).collect(),
                }
            })
            .collect();
        FeatureCache { preprocessor, window_len, fps, streams }
    }

    pub fn from_split(split: &DatasetSplit, preprocessor: Preprocessor, window_len: usize, fps: u32) -> Self {
        FeatureCache::new(&split.streams, preprocessor, window_len, fps)
    }

    pub fn feature_len(&self) -> usize {
        self.preprocessor.config.feature_len()
    }

    pub fn manifest(&self) -> PipelineManifest {
        PipelineManifest { preprocess: self.preprocessor.config, fps: self.fps, window_len: self.window_len }
    }

    pub fn view<'a>(&'a self, spans: &'a [WindowSpan]) -> WindowView<'a> {
        WindowView { cache: self, spans }
    }

    /// Fills `out` with the window `start..=end` of stream `video`.
    pub fn write_window(&self, video: usize, start: usize, end: usize, out: &mut [f32]) {
        let width = self.feature_len();
        let s = &self.streams[video];
        let rows = end + 1 - start;
        out.copy_from_slice(&s.values[start * width..(end + 1) * width]);
        if self.preprocessor.config.normalize == crate::preprocess::Normalization::OnMostRecent {
            let mut w = FeatureWindow {
                rows,
                reduction: self.preprocessor.config.reduce,
                values: out.to_vec(),
                imputed: s.imputed[start..=end].to_vec(),
            };
            self.preprocessor.finish_window(&mut w);
            out.copy_from_slice(&w.values);
        }
    }
}

/// A set of windows served from a [`FeatureCache`].
#[derive(Clone, Copy)]
pub struct WindowView<'a> {
    pub cache: &'a FeatureCache,
    pub spans: &'a [WindowSpan],
}

impl InstanceSource for WindowView<'_> {
    fn len(&self) -> usize {
        self.spans.len()
    }

    fn window_len(&self) -> usize {
        self.cache.window_len
    }

    fn feature_len(&self) -> usize {
        self.cache.feature_len()
    }

    fn label(&self, i: usize) -> MotionClass {
        self.spans[i].label.expect("training windows are labeled")
    }

    fn write_features(&self, i: usize, out: &mut [f32]) {
        let s = &self.spans[i];
        self.cache.write_window(s.video, s.start, s.end, out);
    }

    fn manifest(&self) -> Option<PipelineManifest> {
        Some(self.cache.manifest())
    }
}
