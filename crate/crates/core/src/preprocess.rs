//! The four preprocessing layers, always applied in this order:
//! hand swapping, imputation, dimension reduction, normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{
    flatten, reduce_slot, FrameRecord, Handedness, HandObservation, Reduction, COORDS_PER_HAND, COORDS_PER_POINT,
    SLOTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imputation {
    Constant(f32),
}

impl Imputation {
    fn fill_value(&self) -> f32 {
        match *self {
            Imputation::Constant(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Coordinates stay relative to the image borders.
    ImageAbsolute,
    /// Each slot is expressed relative to its most recent observed skeleton.
    OnMostRecent,
    /// Every skeleton is centered and scaled on itself.
    PerSkeleton,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::ImageAbsolute => "image_absolute",
            Normalization::OnMostRecent => "on_most_recent",
            Normalization::PerSkeleton => "per_skeleton",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub swap_enabled: bool,
    pub impute: Imputation,
    pub reduce: Reduction,
    pub normalize: Normalization,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1e-6
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            swap_enabled: true,
            impute: Imputation::Constant(2.0),
            reduce: Reduction::Full,
            normalize: Normalization::PerSkeleton,
            epsilon: default_epsilon(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        let Imputation::Constant(c) = self.impute;
        if !c.is_finite() {
            return Err(Error::InvalidConfig("imputation constant must be finite".into()));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        self.reduce.feature_len()
    }
}

/// Puts the Left hand in slot 0 and the Right hand in slot 1.
///
/// When both observations claim the same side, the one with the higher
/// handedness score keeps it and the other is relabeled to the opposite
/// side. Equal scores keep detection order.
pub fn swap_hands(frame: &FrameRecord) -> FrameRecord {
    let mut out = frame.clone();
    let hands: Vec<HandObservation> = frame.slots.iter().flatten().cloned().collect();
    out.slots = [None, None];
    match hands.as_slice() {
        [] => {}
        [h] => out.slots[side_slot(h.handedness)] = Some(h.clone()),
        [a, b] => {
            let (mut a, mut b) = (a.clone(), b.clone());
            if a.handedness == b.handedness {
                if b.handedness_score > a.handedness_score {
                    a.handedness = a.handedness.opposite();
                } else {
                    b.handedness = b.handedness.opposite();
                }
            }
            let (ia, ib) = (side_slot(a.handedness), side_slot(b.handedness));
            out.slots[ia] = Some(a);
            out.slots[ib] = Some(b);
        }
        _ => unreachable!("a frame has two slots"),
    }
    out
}

fn side_slot(h: Handedness) -> usize {
    match h {
        Handedness::Left => 0,
        Handedness::Right => 1,
    }
}

/// Feature rows of a window: `rows × (2 × points × 3)` values, row-major,
/// with a per-row, per-slot imputation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub rows: usize,
    pub reduction: Reduction,
    pub values: Vec<f32>,
    pub imputed: Vec<[bool; SLOTS]>,
}

impl FeatureWindow {
    pub fn from_frames(frames: &[FrameRecord], reduction: Reduction) -> Self {
        let width = reduction.feature_len();
        let mut values = Vec::with_capacity(frames.len() * width);
        for f in frames {
            values.extend_from_slice(&flatten(f, reduction).values);
        }
        FeatureWindow { rows: frames.len(), reduction, values, imputed: vec![[false; SLOTS]; frames.len()] }
    }

    pub fn width(&self) -> usize {
        self.reduction.feature_len()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let w = self.width();
        &self.values[r * w..(r + 1) * w]
    }

    pub fn slot(&self, r: usize, s: usize) -> &[f32] {
        let n = self.reduction.slot_len();
        &self.row(r)[s * n..(s + 1) * n]
    }

    fn slot_mut(&mut self, r: usize, s: usize) -> &mut [f32] {
        let n = self.reduction.slot_len();
        let w = self.width();
        &mut self.values[r * w + s * n..r * w + (s + 1) * n]
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }
}

/// Fills every absent slot with the strategy's constant and sets its mask bit.
pub fn impute(window: &mut FeatureWindow, strategy: &Imputation) {
    let c = strategy.fill_value();
    for r in 0..window.rows {
        for s in 0..SLOTS {
            let slot = window.slot_mut(r, s);
            if slot.iter().any(|v| v.is_nan()) {
                slot.fill(c);
                window.imputed[r][s] = true;
            }
        }
    }
}

/// Reduces a full-layout window to `mode`. A window already in `mode`
/// is returned unchanged.
pub fn reduce_dims(window: &FeatureWindow, mode: Reduction) -> Result<FeatureWindow> {
    if window.reduction == mode {
        return Ok(window.clone());
    }
    if window.reduction != Reduction::Full {
        return Err(Error::InvalidConfig(format!(
            "cannot reduce a {} window to {}",
            window.reduction.as_str(),
            mode.as_str()
        )));
    }
    let n = mode.slot_len();
    let mut values = vec![0.0; window.rows * mode.feature_len()];
    for r in 0..window.rows {
        for s in 0..SLOTS {
            let src = window.slot(r, s);
            let start = r * mode.feature_len() + s * n;
            let dst = &mut values[start..start + n];
            if src.iter().any(|v| v.is_nan()) {
                dst.fill(f32::NAN);
            } else {
                reduce_slot(src, mode, dst);
            }
        }
    }
    Ok(FeatureWindow { rows: window.rows, reduction: mode, values, imputed: window.imputed.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NormalizeReport {
    /// Slots with no observed skeleton anywhere in the window
    /// (`OnMostRecent` only); they pass through as imputed constants.
    pub no_reference_slots: usize,
}

#[derive(Debug, Clone, Copy)]
struct Frame3 {
    centroid: [f64; 3],
    scale: f64,
}

fn skeleton_frame(points: &[f32], epsilon: f64) -> Frame3 {
    let n = points.len() / COORDS_PER_POINT;
    let mut centroid = [0.0f64; 3];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points.chunks_exact(COORDS_PER_POINT) {
        for k in 0..3 {
            let v = p[k] as f64;
            centroid[k] += v;
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    for c in &mut centroid {
        *c /= n as f64;
    }
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    // degenerate skeletons collapse to zeros
    let scale = if extent < epsilon { 0.0 } else { 1.0 / extent };
    Frame3 { centroid, scale }
}

fn apply_frame(points: &mut [f32], frame: Frame3) {
    for p in points.chunks_exact_mut(COORDS_PER_POINT) {
        for k in 0..3 {
            p[k] = ((p[k] as f64 - frame.centroid[k]) * frame.scale) as f32;
        }
    }
}

fn observed(window: &FeatureWindow, r: usize, s: usize) -> bool {
    !window.imputed[r][s] && window.slot(r, s).iter().all(|v| v.is_finite())
}

/// Normalizes observed skeletons in place. Imputed slots are left untouched.
///
/// Extent is the largest per-axis range of the reference skeleton; an extent
/// below `epsilon` maps the skeleton to zeros.
pub fn normalize(window: &mut FeatureWindow, mode: Normalization, epsilon: f64) -> NormalizeReport {
    let mut report = NormalizeReport::default();
    match mode {
        Normalization::ImageAbsolute => {}
        Normalization::PerSkeleton => {
            for r in 0..window.rows {
                for s in 0..SLOTS {
                    if observed(window, r, s) {
                        let f = skeleton_frame(window.slot(r, s), epsilon);
                        apply_frame(window.slot_mut(r, s), f);
                    }
                }
            }
        }
        Normalization::OnMostRecent => {
            for s in 0..SLOTS {
                let Some(ref_row) = (0..window.rows).rev().find(|&r| observed(window, r, s)) else {
                    report.no_reference_slots += 1;
                    continue;
                };
                let f = skeleton_frame(window.slot(ref_row, s), epsilon);
                for r in 0..window.rows {
                    if observed(window, r, s) {
                        apply_frame(window.slot_mut(r, s), f);
                    }
                }
            }
        }
    }
    report
}

/// Runs the configured layers over raw frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocessor {
    pub config: PreprocessConfig,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig) -> Result<Self> {
        config.validate()?;
        Ok(Preprocessor { config })
    }

    /// The reference path: each layer applied to the whole window in turn.
    pub fn window(&self, frames: &[FrameRecord]) -> (FeatureWindow, NormalizeReport) {
        let swapped: Vec<FrameRecord> = if self.config.swap_enabled {
            frames.iter().map(swap_hands).collect()
        } else {
            frames.to_vec()
        };
        let mut w = FeatureWindow::from_frames(&swapped, Reduction::Full);
        impute(&mut w, &self.config.impute);
        let mut w = reduce_dims(&w, self.config.reduce).expect("full layout reduces to any mode");
        let report = normalize(&mut w, self.config.normalize, self.config.epsilon);
        (w, report)
    }

    /// Per-frame part of the pipeline: everything except window-relative
    /// normalization. Writes `feature_len` values into `out` and returns
    /// the imputation mask.
    pub fn frame_features(&self, frame: &FrameRecord, out: &mut [f32]) -> [bool; SLOTS] {
        let cfg = &self.config;
        let swapped;
        let frame = if cfg.swap_enabled {
            swapped = swap_hands(frame);
            &swapped
        } else {
            frame
        };
        let n = cfg.reduce.slot_len();
        let fill = cfg.impute.fill_value();
        let mut mask = [false; SLOTS];
        for (s, slot) in frame.slots.iter().enumerate() {
            let dst = &mut out[s * n..(s + 1) * n];
            match slot {
                None => {
                    dst.fill(fill);
                    mask[s] = true;
                }
                Some(hand) => {
                    let coords: [f32; COORDS_PER_HAND] = hand.coords();
                    reduce_slot(&coords, cfg.reduce, dst);
                    if cfg.normalize == Normalization::PerSkeleton {
                        let f = skeleton_frame(dst, cfg.epsilon);
                        apply_frame(dst, f);
                    }
                }
            }
        }
        mask
    }

    /// Window-level step applied after stacking per-frame features.
    pub fn finish_window(&self, window: &mut FeatureWindow) -> NormalizeReport {
        if self.config.normalize == Normalization::OnMostRecent {
            normalize(window, Normalization::OnMostRecent, self.config.epsilon)
        } else {
            NormalizeReport::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::skeleton::test_support::{frame, hand};
    use crate::skeleton::{Landmark, LANDMARKS_PER_HAND};

    fn both(a: HandObservation, b: HandObservation) -> FrameRecord {
        frame(0, [Some(a), Some(b)], None)
    }

    #[test]
    fn swap_exchanges_right_left() {
        let f = both(hand(Handedness::Right, 0.8, 0.6), hand(Handedness::Left, 0.9, 0.2));
        let s = swap_hands(&f);
        assert_eq!(s.slots[0].as_ref().unwrap().handedness_score, 0.9);
        assert_eq!(s.slots[1].as_ref().unwrap().handedness_score, 0.8);
    }

    #[test]
    fn swap_resolves_same_claim_by_score() {
        let f = both(hand(Handedness::Left, 0.6, 0.6), hand(Handedness::Left, 0.9, 0.2));
        let s = swap_hands(&f);
        let (l, r) = (s.slots[0].as_ref().unwrap(), s.slots[1].as_ref().unwrap());
        assert_eq!((l.handedness, l.handedness_score), (Handedness::Left, 0.9));
        assert_eq!((r.handedness, r.handedness_score), (Handedness::Right, 0.6));
    }

    #[test]
    fn swap_places_single_hand_on_its_side() {
        let f = frame(0, [Some(hand(Handedness::Right, 0.7, 0.5)), None], None);
        let s = swap_hands(&f);
        assert!(s.slots[0].is_none());
        assert_eq!(s.slots[1].as_ref().unwrap().handedness_score, 0.7);
        let empty = frame(0, [None, None], None);
        assert_eq!(swap_hands(&empty), empty);
    }

    #[test]
    fn impute_constant_fills_absent_slot() {
        let frames = [frame(0, [Some(hand(Handedness::Left, 0.9, 0.3)), None], None)];
        let mut w = FeatureWindow::from_frames(&frames, Reduction::Full);
        impute(&mut w, &Imputation::Constant(2.0));
        assert!(w.slot(0, 1).iter().all(|&v| v == 2.0));
        assert_eq!(w.imputed[0], [false, true]);
        assert!(!w.has_missing());
    }

    #[test]
    fn impute_without_absences_is_identity() {
        let frames = [both(hand(Handedness::Left, 0.9, 0.3), hand(Handedness::Right, 0.9, 0.6))];
        let w = FeatureWindow::from_frames(&frames, Reduction::Full);
        let mut out = w.clone();
        impute(&mut out, &Imputation::Constant(2.0));
        assert_eq!(
            out.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            w.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(out.imputed, vec![[false, false]]);
    }

    #[test]
    fn impute_fully_absent_frame() {
        let mut w = FeatureWindow::from_frames(&[frame(0, [None, None], None)], Reduction::Full);
        impute(&mut w, &Imputation::Constant(-1.0));
        assert_eq!(w.values.len(), 126);
        assert!(w.values.iter().all(|&v| v == -1.0));
        assert_eq!(w.imputed[0], [true, true]);
    }

    fn constant_hand(p: [f32; 3]) -> HandObservation {
        let mut h = hand(Handedness::Left, 0.9, 0.0);
        h.landmarks = [Landmark::new(p[0], p[1], p[2]); LANDMARKS_PER_HAND];
        h
    }

    #[test]
    fn center_of_gravity_of_identical_points() {
        let w = FeatureWindow::from_frames(&[frame(0, [Some(constant_hand([0.5, 0.5, 0.0])), None], None)], Reduction::Full);
        let r = reduce_dims(&w, Reduction::CenterOfGravity).unwrap();
        assert_eq!(&r.values[..3], &[0.5, 0.5, 0.0]);
        assert_eq!(r.values.len(), 6);
    }

    #[test]
    fn full_reduction_is_identity_and_five_points_has_30() {
        let frames = [both(hand(Handedness::Left, 0.9, 0.3), hand(Handedness::Right, 0.9, 0.6))];
        let w = FeatureWindow::from_frames(&frames, Reduction::Full);
        assert_eq!(reduce_dims(&w, Reduction::Full).unwrap(), w);
        assert_eq!(reduce_dims(&w, Reduction::FivePoints).unwrap().width(), 30);
    }

    #[test]
    fn per_skeleton_removes_translation() {
        let h = hand(Handedness::Left, 0.9, 0.3);
        let mut moved = h.clone();
        for lm in &mut moved.landmarks {
            lm.x += 0.2;
            lm.y += 0.1;
        }
        let mut a = FeatureWindow::from_frames(&[frame(0, [Some(h), None], None)], Reduction::Full);
        let mut b = FeatureWindow::from_frames(&[frame(0, [Some(moved), None], None)], Reduction::Full);
        for w in [&mut a, &mut b] {
            impute(w, &Imputation::Constant(2.0));
            normalize(w, Normalization::PerSkeleton, 1e-6);
        }
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn per_skeleton_degenerate_maps_to_zero() {
        let mut w = FeatureWindow::from_frames(&[frame(0, [Some(constant_hand([0.4, 0.4, 0.1])), None], None)], Reduction::Full);
        normalize(&mut w, Normalization::PerSkeleton, 1e-6);
        assert!(w.slot(0, 0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn on_most_recent_without_reference_is_counted() {
        let frames: Vec<_> = (0..3).map(|i| frame(i, [Some(hand(Handedness::Left, 0.9, 0.3)), None], None)).collect();
        let mut w = FeatureWindow::from_frames(&frames, Reduction::Full);
        impute(&mut w, &Imputation::Constant(2.0));
        let report = normalize(&mut w, Normalization::OnMostRecent, 1e-6);
        assert_eq!(report.no_reference_slots, 1);
        assert!((0..3).all(|r| w.slot(r, 1).iter().all(|&v| v == 2.0)));
    }

    #[test]
    fn on_most_recent_uses_latest_observed_frame() {
        let h = hand(Handedness::Left, 0.9, 0.3);
        let frames = vec![frame(0, [Some(h.clone()), None], None), frame(1, [None, None], None)];
        let mut w = FeatureWindow::from_frames(&frames, Reduction::Full);
        impute(&mut w, &Imputation::Constant(2.0));
        normalize(&mut w, Normalization::OnMostRecent, 1e-6);
        // the only observed frame is its own reference: centered
        let mean_x: f32 = w.slot(0, 0).chunks(3).map(|p| p[0]).sum::<f32>() / 21.0;
        assert!(mean_x.abs() < 1e-6);
        assert!(w.slot(1, 0).iter().all(|&v| v == 2.0));
    }

    fn arb_hand() -> impl Strategy<Value = Option<HandObservation>> {
        prop::option::weighted(
            0.8,
            (prop::collection::vec(0.1f32..0.9, COORDS_PER_HAND), any::<bool>(), 0.5f32..1.0).prop_map(|(c, left, sc)| {
                let mut h = hand(if left { Handedness::Left } else { Handedness::Right }, sc, 0.0);
                for (i, lm) in h.landmarks.iter_mut().enumerate() {
                    *lm = Landmark::new(c[3 * i], c[3 * i + 1], c[3 * i + 2] * 0.1);
                }
                h
            }),
        )
    }

    fn arb_frames() -> impl Strategy<Value = Vec<FrameRecord>> {
        prop::collection::vec((arb_hand(), arb_hand()), 1..12)
            .prop_map(|v| v.into_iter().enumerate().map(|(i, (a, b))| frame(i as u64, [a, b], Some(1))).collect())
    }

    fn configs() -> Vec<PreprocessConfig> {
        let mut out = Vec::new();
        for swap_enabled in [false, true] {
            for reduce in [Reduction::Full, Reduction::CenterOfGravity, Reduction::FivePoints] {
                for normalize in [Normalization::ImageAbsolute, Normalization::OnMostRecent, Normalization::PerSkeleton] {
                    out.push(PreprocessConfig { swap_enabled, impute: Imputation::Constant(2.0), reduce, normalize, epsilon: 1e-6 });
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn swap_is_idempotent(a in arb_hand(), b in arb_hand()) {
            let f = frame(0, [a, b], None);
            let once = swap_hands(&f);
            prop_assert_eq!(swap_hands(&once), once);
        }

        #[test]
        fn imputed_windows_have_no_missing(frames in arb_frames()) {
            let mut w = FeatureWindow::from_frames(&frames, Reduction::Full);
            impute(&mut w, &Imputation::Constant(2.0));
            prop_assert!(!w.has_missing());
        }

        #[test]
        fn per_frame_path_matches_layered_path(frames in arb_frames()) {
            for cfg in configs() {
                let p = Preprocessor::new(cfg).unwrap();
                let (reference, _) = p.window(&frames);
                let width = cfg.feature_len();
                let mut fast = FeatureWindow { rows: frames.len(), reduction: cfg.reduce, values: vec![0.0; frames.len() * width], imputed: vec![] };
                for (r, f) in frames.iter().enumerate() {
                    let m = p.frame_features(f, &mut fast.values[r * width..(r + 1) * width]);
                    fast.imputed.push(m);
                }
                p.finish_window(&mut fast);
                prop_assert_eq!(&fast.imputed, &reference.imputed);
                for (x, y) in fast.values.iter().zip(&reference.values) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
