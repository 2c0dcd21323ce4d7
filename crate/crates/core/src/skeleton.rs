//! Hand-skeleton frame records and their flattening into feature vectors.
//!
//! A frame carries up to two hand observations of 21 landmarks each. A hand
//! is either fully present or fully absent; partially missing coordinates are
//! rejected at validation time.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LANDMARKS_PER_HAND: usize = 21;
pub const COORDS_PER_POINT: usize = 3;
pub const COORDS_PER_HAND: usize = LANDMARKS_PER_HAND * COORDS_PER_POINT;
pub const SLOTS: usize = 2;
pub const NUM_CLASSES: usize = 10;

/// Landmarks kept by [`Reduction::FivePoints`]: wrist, thumb tip, index tip,
/// middle tip and pinky tip.
pub const FIVE_POINT_INDICES: [usize; 5] = [0, 4, 8, 12, 20];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Landmark {
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

impl Landmark {
    pub fn new(x: f32, y: f32, z: f32) -> Self {
        Landmark { x, y, z }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Handedness {
    Left,
    Right,
}

impl Handedness {
    pub fn opposite(self) -> Self {
        match self {
            Handedness::Left => Handedness::Right,
            Handedness::Right => Handedness::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Handedness::Left => "Left",
            Handedness::Right => "Right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "Left" | "left" | "L" => Some(Handedness::Left),
            "Right" | "right" | "R" => Some(Handedness::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandObservation {
    pub landmarks: [Landmark; LANDMARKS_PER_HAND],
    pub handedness: Handedness,
    pub handedness_score: f32,
    pub detection_score: f32,
}

impl HandObservation {
    /// Coordinates in x, y, z order per landmark.
    pub fn coords(&self) -> [f32; COORDS_PER_HAND] {
        let mut out = [0.0; COORDS_PER_HAND];
        for (i, lm) in self.landmarks.iter().enumerate() {
            out[3 * i] = lm.x;
            out[3 * i + 1] = lm.y;
            out[3 * i + 2] = lm.z;
        }
        out
    }

    /// Number of landmarks whose x or y lies outside the image `[0, 1]`.
    pub fn out_of_frame_points(&self) -> usize {
        self.landmarks
            .iter()
            .filter(|lm| !(0.0..=1.0).contains(&lm.x) || !(0.0..=1.0).contains(&lm.y))
            .count()
    }
}

/// Motion class id. Class 0 is the error class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct MotionClass(u8);

impl MotionClass {
    pub const ERROR: MotionClass = MotionClass(0);

    pub fn new(id: i64) -> Result<Self> {
        if (0..NUM_CLASSES as i64).contains(&id) {
            Ok(MotionClass(id as u8))
        } else {
            Err(Error::LabelOutOfRange(id))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = MotionClass> {
        (0..NUM_CLASSES as u8).map(MotionClass)
    }
}

impl TryFrom<i64> for MotionClass {
    type Error = Error;

    fn try_from(v: i64) -> Result<Self> {
        MotionClass::new(v)
    }
}

impl From<MotionClass> for u8 {
    fn from(c: MotionClass) -> u8 {
        c.0
    }
}

impl fmt::Display for MotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub video_id: String,
    pub worker_id: String,
    pub frame_index: u64,
    pub slots: [Option<HandObservation>; SLOTS],
    pub label: Option<MotionClass>,
}

impl FrameRecord {
    pub fn present_hands(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn to_raw(&self) -> RawFrame {
        let slot = |s: &Option<HandObservation>| match s {
            None => RawSlot::absent(),
            Some(h) => RawSlot {
                present: true,
                handedness: Some(h.handedness.as_str().to_string()),
                handedness_score: Some(h.handedness_score as f64),
                detection_score: Some(h.detection_score as f64),
                coords: h.coords().iter().map(|&c| Some(c as f64)).collect(),
            },
        };
        RawFrame {
            video_id: self.video_id.clone(),
            worker_id: self.worker_id.clone(),
            frame_index: self.frame_index,
            slots: [slot(&self.slots[0]), slot(&self.slots[1])],
            label: self.label.map(|c| c.id() as i64),
        }
    }
}

/// One hand slot as read from a file, before any checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSlot {
    pub present: bool,
    pub handedness: Option<String>,
    pub handedness_score: Option<f64>,
    pub detection_score: Option<f64>,
    /// 63 entries in x0, y0, z0, ..., z20 order; `None` marks a missing field.
    pub coords: Vec<Option<f64>>,
}

impl RawSlot {
    pub fn absent() -> Self {
        RawSlot {
            present: false,
            handedness: None,
            handedness_score: None,
            detection_score: None,
            coords: vec![None; COORDS_PER_HAND],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub video_id: String,
    pub worker_id: String,
    pub frame_index: u64,
    pub slots: [RawSlot; SLOTS],
    pub label: Option<i64>,
}

fn check_score(field: &'static str, value: Option<f64>) -> Result<f32> {
    let v = value.unwrap_or(f64::NAN);
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::ScoreOutOfRange { field, value: v });
    }
    Ok(v as f32)
}

fn validate_slot(slot_idx: usize, raw: &RawSlot) -> Result<Option<HandObservation>> {
    if raw.coords.len() != COORDS_PER_HAND {
        return Err(Error::MalformedRow {
            line: 0,
            reason: format!("slot {slot_idx}: expected {COORDS_PER_HAND} coordinates, got {}", raw.coords.len()),
        });
    }
    let present = raw.coords.iter().filter(|c| c.is_some_and(f64::is_finite)).count();
    let missing = COORDS_PER_HAND - present;
    if present == 0 {
        if raw.present {
            return Err(Error::MixedMissingness { slot: slot_idx, present: 0, missing });
        }
        return Ok(None);
    }
    if missing > 0 || !raw.present {
        return Err(Error::MixedMissingness { slot: slot_idx, present, missing });
    }
    let handedness = raw
        .handedness
        .as_deref()
        .and_then(Handedness::parse)
        .ok_or_else(|| Error::MalformedRow {
            line: 0,
            reason: format!("slot {slot_idx}: handedness must be Left or Right"),
        })?;
    let handedness_score = check_score("handedness_score", raw.handedness_score)?;
    let detection_score = check_score("detection_score", raw.detection_score)?;
    let mut landmarks = [Landmark::default(); LANDMARKS_PER_HAND];
    for (i, lm) in landmarks.iter_mut().enumerate() {
        // all finite, checked above
        let c = |k: usize| raw.coords[3 * i + k].unwrap() as f32;
        *lm = Landmark::new(c(0), c(1), c(2));
        debug_assert!(lm.is_finite());
    }
    Ok(Some(HandObservation { landmarks, handedness, handedness_score, detection_score }))
}

/// Checks a raw frame against the record schema.
///
/// A slot is absent exactly when all 63 coordinate fields are missing (empty
/// or non-finite). Coordinates outside `[0, 1]` are accepted unchanged; see
/// [`HandObservation::out_of_frame_points`].
pub fn validate_frame(raw: &RawFrame) -> Result<FrameRecord> {
    let label = raw.label.map(MotionClass::new).transpose()?;
    let s0 = validate_slot(0, &raw.slots[0])?;
    let s1 = validate_slot(1, &raw.slots[1])?;
    Ok(FrameRecord {
        video_id: raw.video_id.clone(),
        worker_id: raw.worker_id.clone(),
        frame_index: raw.frame_index,
        slots: [s0, s1],
        label,
    })
}

/// Spatial reduction of a hand's 21 landmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Full,
    CenterOfGravity,
    FivePoints,
}

impl Reduction {
    pub fn points_per_hand(self) -> usize {
        match self {
            Reduction::Full => LANDMARKS_PER_HAND,
            Reduction::CenterOfGravity => 1,
            Reduction::FivePoints => FIVE_POINT_INDICES.len(),
        }
    }

    pub fn slot_len(self) -> usize {
        self.points_per_hand() * COORDS_PER_POINT
    }

    pub fn feature_len(self) -> usize {
        SLOTS * self.slot_len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Reduction::Full => "full",
            Reduction::CenterOfGravity => "center_of_gravity",
            Reduction::FivePoints => "five_points",
        }
    }
}

/// Reduces one slot's 63 full-layout coordinates into `out`
/// (`mode.slot_len()` values).
pub fn reduce_slot(full: &[f32], mode: Reduction, out: &mut [f32]) {
    debug_assert_eq!(full.len(), COORDS_PER_HAND);
    debug_assert_eq!(out.len(), mode.slot_len());
    match mode {
        Reduction::Full => out.copy_from_slice(full),
        Reduction::CenterOfGravity => {
            for k in 0..COORDS_PER_POINT {
                let sum: f64 = (0..LANDMARKS_PER_HAND).map(|i| full[3 * i + k] as f64).sum();
                out[k] = (sum / LANDMARKS_PER_HAND as f64) as f32;
            }
        }
        Reduction::FivePoints => {
            for (j, &i) in FIVE_POINT_INDICES.iter().enumerate() {
                out[3 * j..3 * j + 3].copy_from_slice(&full[3 * i..3 * i + 3]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub reduction: Reduction,
    pub imputed: [bool; SLOTS],
}

impl FeatureVector {
    pub fn points_per_hand(&self) -> usize {
        self.reduction.points_per_hand()
    }

    pub fn slot(&self, s: usize) -> &[f32] {
        let n = self.reduction.slot_len();
        &self.values[s * n..(s + 1) * n]
    }
}

/// Missing-value marker inside feature vectors.
pub const MISSING: f32 = f32::NAN;

/// Flattens a frame: slot 0 then slot 1, x/y/z contiguous per landmark.
/// Absent slots are filled with [`MISSING`]; imputation happens later.
pub fn flatten(frame: &FrameRecord, reduction: Reduction) -> FeatureVector {
    let n = reduction.slot_len();
    let mut values = vec![MISSING; SLOTS * n];
    for (s, slot) in frame.slots.iter().enumerate() {
        if let Some(hand) = slot {
            reduce_slot(&hand.coords(), reduction, &mut values[s * n..(s + 1) * n]);
        }
    }
    FeatureVector { values, reduction, imputed: [false; SLOTS] }
}
