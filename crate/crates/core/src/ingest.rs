//! Frame-record and label-table files, label assignment, frame-rate
//! emulation, the per-video train/validation split and sliding windows.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{
    validate_frame, FrameRecord, MotionClass, RawFrame, RawSlot, COORDS_PER_HAND, LANDMARKS_PER_HAND, SLOTS,
};

pub const SOURCE_FPS: u32 = 30;

/// Frame rates reachable from 30 fps by exact decimation.
pub const ALLOWED_FPS: [u32; 8] = [1, 2, 3, 5, 6, 10, 15, 30];

const META_COLS: usize = 3;
const SLOT_COLS: usize = 4 + COORDS_PER_HAND;
const FRAME_COLS: usize = META_COLS + SLOTS * SLOT_COLS + 1;

/// Column names of the frame-record CSV, in order.
pub fn frame_header() -> Vec<String> {
    let mut cols = vec!["video_id".to_string(), "worker_id".into(), "frame_index".into()];
    for s in 0..SLOTS {
        cols.push(format!("s{s}_present"));
        cols.push(format!("s{s}_handedness"));
        cols.push(format!("s{s}_hand_score"));
        cols.push(format!("s{s}_det_score"));
        for i in 0..LANDMARKS_PER_HAND {
            for axis in ["x", "y", "z"] {
                cols.push(format!("s{s}_{axis}{i}"));
            }
        }
    }
    cols.push("label".into());
    cols
}

fn malformed(line: u64, reason: impl Into<String>) -> Error {
    Error::MalformedRow { line, reason: reason.into() }
}

fn parse_opt_f64(field: &str, line: u64, name: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| malformed(line, format!("{name}: not a number: {field:?}")))
}

fn parse_row(rec: &csv::StringRecord, line: u64) -> Result<RawFrame> {
    if rec.len() != FRAME_COLS {
        return Err(malformed(line, format!("expected {FRAME_COLS} fields, got {}", rec.len())));
    }
    let frame_index = rec[2]
        .parse::<u64>()
        .map_err(|_| malformed(line, format!("frame_index: not a non-negative integer: {:?}", &rec[2])))?;
    let mut slots = [RawSlot::absent(), RawSlot::absent()];
    for (s, slot) in slots.iter_mut().enumerate() {
        let base = META_COLS + s * SLOT_COLS;
        slot.present = match &rec[base] {
            "1" | "true" => true,
            "0" | "false" | "" => false,
            other => return Err(malformed(line, format!("s{s}_present: expected 0 or 1, got {other:?}"))),
        };
        slot.handedness = (!rec[base + 1].is_empty()).then(|| rec[base + 1].to_string());
        slot.handedness_score = parse_opt_f64(&rec[base + 2], line, "hand_score")?;
        slot.detection_score = parse_opt_f64(&rec[base + 3], line, "det_score")?;
        for k in 0..COORDS_PER_HAND {
            slot.coords[k] = parse_opt_f64(&rec[base + 4 + k], line, "coordinate")?;
        }
    }
    let label_field = &rec[FRAME_COLS - 1];
    let label = if label_field.is_empty() {
        None
    } else {
        Some(
            label_field
                .parse::<i64>()
                .map_err(|_| malformed(line, format!("label: not an integer: {label_field:?}")))?,
        )
    };
    Ok(RawFrame { video_id: rec[0].to_string(), worker_id: rec[1].to_string(), frame_index, slots, label })
}

/// Validated frame records read one CSV row at a time.
pub struct FrameReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    line: u64,
    last: BTreeMap<String, u64>,
    out_of_frame: usize,
}

impl<R: Read> FrameReader<R> {
    /// Checks the header; rows are parsed lazily.
    pub fn new(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source);
        let header = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
        let expected = frame_header();
        if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a.trim() != b) {
            return Err(malformed(1, "header does not match the frame-record column layout"));
        }
        Ok(FrameReader { records: reader.into_records(), line: 1, last: BTreeMap::new(), out_of_frame: 0 })
    }

    /// Landmarks outside the image bounds seen so far.
    pub fn out_of_frame_points(&self) -> usize {
        self.out_of_frame
    }

    fn next_frame(&mut self, rec: csv::Result<csv::StringRecord>) -> Result<FrameRecord> {
        let line = self.line;
        let rec = rec.map_err(|e| malformed(line, e.to_string()))?;
        let raw = parse_row(&rec, line)?;
        let frame = validate_frame(&raw).map_err(|e| match e {
            Error::MalformedRow { reason, .. } => malformed(line, reason),
            other => malformed(line, other.to_string()),
        })?;
        if let Some(&prev) = self.last.get(&frame.video_id) {
            if frame.frame_index <= prev {
                return Err(Error::NonMonotonicFrameIndex { line, prev, next: frame.frame_index });
            }
        }
        self.last.insert(frame.video_id.clone(), frame.frame_index);
        self.out_of_frame += frame.slots.iter().flatten().map(|h| h.out_of_frame_points()).sum::<usize>();
        Ok(frame)
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<FrameRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = self.records.next()?;
        self.line += 1;
        Some(self.next_frame(rec))
    }
}

/// Parses a frame-record CSV. Every row is validated; frame indices must
/// strictly increase within each video.
pub fn parse_skeleton_file<R: Read>(source: R) -> Result<Vec<FrameRecord>> {
    let mut reader = FrameReader::new(source)?;
    let out = reader.by_ref().collect::<Result<Vec<_>>>()?;
    if reader.out_of_frame_points() > 0 {
        log::warn!("{} landmarks lie outside the image bounds; kept unclamped", reader.out_of_frame_points());
    }
    Ok(out)
}

fn fmt_f32(v: f32) -> String {
    format!("{v}")
}

/// Writes frames in the frame-record CSV layout.
pub fn write_skeleton_file<W: Write>(sink: W, frames: &[FrameRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(sink);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(frame_header()).map_err(io)?;
    let mut row: Vec<String> = Vec::with_capacity(FRAME_COLS);
    for f in frames {
        row.clear();
        row.push(f.video_id.clone());
        row.push(f.worker_id.clone());
        row.push(f.frame_index.to_string());
        for slot in &f.slots {
            match slot {
                Some(h) => {
                    row.push("1".into());
                    row.push(h.handedness.as_str().into());
                    row.push(fmt_f32(h.handedness_score));
                    row.push(fmt_f32(h.detection_score));
                    row.extend(h.coords().iter().map(|&c| fmt_f32(c)));
                }
                None => {
                    row.push("0".into());
                    row.extend(std::iter::repeat_n(String::new(), SLOT_COLS - 1));
                }
            }
        }
        row.push(f.label.map(|c| c.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Start frames of motion classes; the label is a right-continuous step
/// function of the frame index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTable {
    entries: Vec<(u64, MotionClass)>,
}

impl LabelTable {
    pub fn new(entries: Vec<(u64, MotionClass)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyTable);
        }
        if let Some(w) = entries.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidConfig(format!(
                "label table start frames must strictly increase ({} then {})",
                w[0].0, w[1].0
            )));
        }
        Ok(LabelTable { entries })
    }

    pub fn entries(&self) -> &[(u64, MotionClass)] {
        &self.entries
    }

    pub fn label_at(&self, frame: u64) -> Result<MotionClass> {
        let pos = self.entries.partition_point(|&(start, _)| start <= frame);
        if pos == 0 {
            return Err(Error::UnlabeledPrefix { frame, first_start: self.entries[0].0 });
        }
        Ok(self.entries[pos - 1].1)
    }

    /// Collapses a per-frame label sequence into its change points.
    pub fn from_frames(frames: &[FrameRecord]) -> Result<Self> {
        let mut entries: Vec<(u64, MotionClass)> = Vec::new();
        for f in frames {
            let Some(c) = f.label else { continue };
            if entries.last().is_none_or(|&(_, prev)| prev != c) {
                entries.push((f.frame_index, c));
            }
        }
        LabelTable::new(entries)
    }
}

pub fn parse_label_table<R: Read>(source: R) -> Result<LabelTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let header = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    if header.len() != 2 || &header[0] != "start_frame" || &header[1] != "class_id" {
        return Err(malformed(1, "label table header must be start_frame,class_id"));
    }
    let mut entries = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| malformed(line, e.to_string()))?;
        let start = rec[0].parse::<u64>().map_err(|_| malformed(line, "start_frame: not a non-negative integer"))?;
        let class = rec[1].parse::<i64>().map_err(|_| malformed(line, "class_id: not an integer"))?;
        entries.push((start, MotionClass::new(class).map_err(|e| malformed(line, e.to_string()))?));
    }
    LabelTable::new(entries).map_err(|e| match e {
        Error::InvalidConfig(msg) => malformed(0, msg),
        other => other,
    })
}

pub fn write_label_table<W: Write>(mut sink: W, table: &LabelTable) -> Result<()> {
    writeln!(sink, "start_frame,class_id")?;
    for (start, class) in table.entries() {
        writeln!(sink, "{start},{class}")?;
    }
    Ok(())
}

/// Assigns each frame the class of the greatest start frame not after it.
pub fn apply_labels(frames: &mut [FrameRecord], table: &LabelTable) -> Result<()> {
    for f in frames.iter_mut() {
        f.label = Some(table.label_at(f.frame_index)?);
    }
    Ok(())
}

/// Keeps frames whose index is a multiple of `source_fps / target_fps`.
pub fn emulate_fps(stream: &[FrameRecord], source_fps: u32, target_fps: u32) -> Result<Vec<FrameRecord>> {
    if target_fps == 0 || target_fps > source_fps || source_fps % target_fps != 0 {
        return Err(Error::NonDivisorRate { source_fps, target: target_fps });
    }
    let step = u64::from(source_fps / target_fps);
    Ok(stream.iter().filter(|f| f.frame_index % step == 0).cloned().collect())
}

/// All frames of one video, in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoStream {
    pub video_id: String,
    pub worker_id: String,
    pub frames: Vec<FrameRecord>,
}

impl VideoStream {
    /// Groups records by video id, keeping first-appearance order of videos.
    pub fn group(frames: Vec<FrameRecord>) -> Vec<VideoStream> {
        let mut order: Vec<VideoStream> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for f in frames {
            let i = *index.entry(f.video_id.clone()).or_insert_with(|| {
                order.push(VideoStream { video_id: f.video_id.clone(), worker_id: f.worker_id.clone(), frames: Vec::new() });
                order.len() - 1
            });
            order[i].frames.push(f);
        }
        order
    }
}

/// Loads every `*.frames.csv` in a directory (sorted by file name). When a
/// sibling `<video>.labels.csv` exists its labels replace the embedded ones.
pub fn read_dataset_dir(dir: &Path) -> Result<Vec<VideoStream>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".frames.csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!("no *.frames.csv files in {}", dir.display())));
    }
    let mut streams = Vec::new();
    for path in files {
        let mut frames = parse_skeleton_file(BufReader::new(File::open(&path)?))?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let labels = path.with_file_name(name.replace(".frames.csv", ".labels.csv"));
        if labels.exists() {
            let table = parse_label_table(BufReader::new(File::open(&labels)?))?;
            apply_labels(&mut frames, &table)?;
        }
        streams.extend(VideoStream::group(frames));
    }
    Ok(streams)
}

/// Frame partition of one video: leading `floor(N * ratio)` frames train,
/// the rest validate.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSplit {
    pub video_id: String,
    pub train: Vec<FrameRecord>,
    pub val: Vec<FrameRecord>,
}

pub fn split_train_val(videos: &[VideoStream], ratio: f64) -> Result<Vec<VideoSplit>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidConfig(format!("split ratio {ratio} outside [0, 1]")));
    }
    if ratio == 1.0 {
        log::warn!("split ratio 1.0 leaves the validation set empty");
    }
    videos
        .iter()
        .map(|v| {
            if v.frames.is_empty() {
                return Err(Error::EmptyVideo(v.video_id.clone()));
            }
            let n_train = split_point(v.frames.len(), ratio);
            Ok(VideoSplit {
                video_id: v.video_id.clone(),
                train: v.frames[..n_train].to_vec(),
                val: v.frames[n_train..].to_vec(),
            })
        })
        .collect()
}

fn split_point(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio).floor() as usize).min(n)
}

/// A window into a stream: positions `start..=end` of the stream's frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpan {
    pub video: usize,
    pub start: usize,
    pub end: usize,
    pub end_frame: u64,
    pub label: Option<MotionClass>,
}

impl WindowSpan {
    pub fn frames<'a>(&self, stream: &'a [FrameRecord]) -> &'a [FrameRecord] {
        &stream[self.start..=self.end]
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowParams {
    pub window_len: usize,
    pub hop: usize,
    pub fps: u32,
    pub max_history_s: Option<f64>,
}

impl WindowParams {
    pub fn history_seconds(&self) -> f64 {
        self.window_len as f64 / self.fps as f64
    }

    pub fn check(&self) -> Result<()> {
        if self.window_len == 0 || self.hop == 0 || self.fps == 0 {
            return Err(Error::InvalidConfig("window length, hop and fps must be positive".into()));
        }
        if let Some(budget) = self.max_history_s {
            let seconds = self.history_seconds();
            if seconds > budget {
                return Err(Error::HistoryBudgetExceeded { seconds, budget });
            }
        }
        Ok(())
    }
}

/// Sliding windows over one (already downsampled) video stream: one window
/// per end position `W-1, W-1+hop, ...`, labeled by its last frame.
pub fn build_windows(stream: &[FrameRecord], video: usize, params: &WindowParams) -> Result<Vec<WindowSpan>> {
    params.check()?;
    let w = params.window_len;
    if stream.len() < w {
        return Err(Error::StreamTooShort { len: stream.len(), window: w });
    }
    if let Some(f) = stream.iter().find(|f| f.video_id != stream[0].video_id) {
        return Err(Error::InvalidConfig(format!(
            "window source mixes videos {} and {}",
            stream[0].video_id, f.video_id
        )));
    }
    Ok((w - 1..stream.len())
        .step_by(params.hop)
        .map(|end| WindowSpan {
            video,
            start: end + 1 - w,
            end,
            end_frame: stream[end].frame_index,
            label: stream[end].label,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOptions {
    pub ratio: f64,
    pub holdout_workers: Vec<String>,
    pub fps: u32,
    pub window_len: usize,
    pub train_hop: usize,
    pub eval_hop: usize,
    pub max_history_s: Option<f64>,
}

impl SplitOptions {
    /// Window parameters of the evaluation partitions.
    pub fn to_window_params(&self) -> WindowParams {
        WindowParams { window_len: self.window_len, hop: self.eval_hop, fps: self.fps, max_history_s: self.max_history_s }
    }
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            ratio: 0.8,
            holdout_workers: Vec::new(),
            fps: SOURCE_FPS,
            window_len: 104,
            train_hop: 1,
            eval_hop: 1,
            max_history_s: None,
        }
    }
}

/// Downsampled streams plus the windows assigned to each partition.
///
/// Train windows end before the video's split boundary and therefore lie
/// wholly in the train part. Validation windows end at or after it and may
/// reach back across the boundary for their history.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub streams: Vec<VideoStream>,
    pub train: Vec<WindowSpan>,
    pub val: Vec<WindowSpan>,
    pub holdout: Vec<WindowSpan>,
    pub split_ratio: f64,
}

impl DatasetSplit {
    pub fn build(videos: &[VideoStream], opts: &SplitOptions) -> Result<Self> {
        let split_windows = |hop: usize| WindowParams {
            window_len: opts.window_len,
            hop,
            fps: opts.fps,
            max_history_s: opts.max_history_s,
        };
        let (train_params, eval_params) = (split_windows(opts.train_hop), split_windows(opts.eval_hop));
        train_params.check()?;
        eval_params.check()?;

        let mut out = DatasetSplit {
            streams: Vec::with_capacity(videos.len()),
            train: Vec::new(),
            val: Vec::new(),
            holdout: Vec::new(),
            split_ratio: opts.ratio,
        };
        let splits = split_train_val(videos, opts.ratio)?;
        for (v, split) in videos.iter().zip(&splits) {
            let frames = emulate_fps(&v.frames, SOURCE_FPS, opts.fps)?;
            if frames.iter().any(|f| f.label.is_none()) {
                return Err(Error::InvalidConfig(format!("video {} has unlabeled frames", v.video_id)));
            }
            let idx = out.streams.len();
            let is_holdout = opts.holdout_workers.contains(&v.worker_id);
            if frames.len() >= opts.window_len {
                if is_holdout {
                    out.holdout.extend(build_windows(&frames, idx, &eval_params)?);
                } else {
                    let boundary = split.val.first().map_or(u64::MAX, |f| f.frame_index);
                    out.train.extend(
                        build_windows(&frames, idx, &train_params)?.into_iter().filter(|s| s.end_frame < boundary),
                    );
                    out.val.extend(
                        build_windows(&frames, idx, &eval_params)?.into_iter().filter(|s| s.end_frame >= boundary),
                    );
                }
            } else {
                log::warn!("video {} is shorter than one window after downsampling; skipped", v.video_id);
            }
            out.streams.push(VideoStream { video_id: v.video_id.clone(), worker_id: v.worker_id.clone(), frames });
        }
        Ok(out)
    }
}
