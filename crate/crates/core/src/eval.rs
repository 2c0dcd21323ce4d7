//! Frame-level evaluation: confusion, per-class report, grouped accuracy,
//! temporal profiles inside segments, transition analysis, and the KPI
//! helpers (smoothing, segmentation, cycle times).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::NUM_CLASSES;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

fn check_classes(seq: &[u8]) -> Result<()> {
    match seq.iter().find(|&&c| c as usize >= NUM_CLASSES) {
        Some(&c) => Err(Error::LabelOutOfRange(i64::from(c))),
        None => Ok(()),
    }
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total()).0
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }
}

pub fn confusion_matrix(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    same_len(predictions.len(), labels.len())?;
    check_classes(predictions)?;
    check_classes(labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(labels) {
        cm.counts[t as usize][p as usize] += 1;
    }
    Ok(cm)
}

/// `num / den`, or 0 flagged as degenerate when both are zero.
fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when any of the three metrics hit 0/0 and was reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
}

impl ClassReport {
    /// Class ids sorted by descending recall (per-class accuracy); ties by id.
    pub fn recall_ranking(&self) -> Vec<u8> {
        let mut order: Vec<&ClassMetrics> = self.classes.iter().filter(|m| m.support > 0).collect();
        order.sort_by(|a, b| b.recall.total_cmp(&a.recall).then(a.class.cmp(&b.class)));
        order.iter().map(|m| m.class).collect()
    }
}

pub fn class_report(cm: &ConfusionMatrix) -> ClassReport {
    let classes = (0..NUM_CLASSES)
        .map(|c| {
            let tp = cm.counts[c][c];
            let (precision, dp) = ratio(tp, cm.col_sum(c));
            let (recall, dr) = ratio(tp, cm.row_sum(c));
            let (f1, df) =
                if precision + recall == 0.0 { (0.0, true) } else { (2.0 * precision * recall / (precision + recall), false) };
            ClassMetrics { class: c as u8, precision, recall, f1, support: cm.row_sum(c), degenerate: dp || dr || df }
        })
        .collect();
    ClassReport { classes, accuracy: cm.accuracy() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub accuracy: f64,
    pub correct: u64,
    pub frames: u64,
}

pub fn grouped_accuracy<G: Ord + Clone>(predictions: &[u8], labels: &[u8], groups: &[G]) -> Result<BTreeMap<G, GroupAccuracy>> {
    same_len(predictions.len(), labels.len())?;
    same_len(predictions.len(), groups.len())?;
    let mut counts: BTreeMap<G, (u64, u64)> = BTreeMap::new();
    for ((p, t), g) in predictions.iter().zip(labels).zip(groups) {
        let e = counts.entry(g.clone()).or_default();
        e.0 += u64::from(p == t);
        e.1 += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(g, (correct, frames))| (g, GroupAccuracy { accuracy: ratio(correct, frames).0, correct, frames }))
        .collect())
}

/// Correct and total frame counts per class and normalized-position bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalProfile {
    pub n_bins: usize,
    pub correct: Vec<Vec<u64>>,
    pub total: Vec<Vec<u64>>,
}

impl TemporalProfile {
    pub fn new(n_bins: usize) -> Self {
        TemporalProfile { n_bins, correct: vec![vec![0; n_bins]; NUM_CLASSES], total: vec![vec![0; n_bins]; NUM_CLASSES] }
    }

    /// Accuracy of a class in a bin, `None` when no frame fell into it.
    pub fn accuracy(&self, class: usize, bin: usize) -> Option<f64> {
        let t = self.total[class][bin];
        (t > 0).then(|| self.correct[class][bin] as f64 / t as f64)
    }

    pub fn add(&mut self, other: &TemporalProfile) {
        assert_eq!(self.n_bins, other.n_bins, "profiles with different bin counts");
        for c in 0..NUM_CLASSES {
            for b in 0..self.n_bins {
                self.correct[c][b] += other.correct[c][b];
                self.total[c][b] += other.total[c][b];
            }
        }
    }
}

/// Frame `i` of a ground-truth segment of length `L` falls in bin
/// `floor(n_bins · i / L)`.
pub fn temporal_profile(predictions: &[u8], labels: &[u8], n_bins: usize) -> Result<TemporalProfile> {
    same_len(predictions.len(), labels.len())?;
    check_classes(labels)?;
    if n_bins == 0 {
        return Err(Error::InvalidConfig("temporal profile needs at least one bin".into()));
    }
    let mut prof = TemporalProfile::new(n_bins);
    for seg in segment(labels) {
        let len = seg.len();
        for (i, pos) in (seg.start..=seg.end).enumerate() {
            let bin = n_bins * i / len;
            let c = seg.class as usize;
            prof.total[c][bin] += 1;
            prof.correct[c][bin] += u64::from(predictions[pos] == labels[pos]);
        }
    }
    Ok(prof)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransitionAnalysis {
    pub errors: u64,
    pub near_transition: u64,
    pub adjacent_confusions: u64,
    pub share_near_transition: f64,
    pub adjacent_confusion_rate: f64,
}

impl TransitionAnalysis {
    fn from_counts(errors: u64, near_transition: u64, adjacent_confusions: u64) -> Self {
        TransitionAnalysis {
            errors,
            near_transition,
            adjacent_confusions,
            share_near_transition: ratio(near_transition, errors).0,
            adjacent_confusion_rate: ratio(adjacent_confusions, errors).0,
        }
    }

    /// Pools the counts of several sequences.
    pub fn combine(parts: &[TransitionAnalysis]) -> Self {
        let sum = |f: fn(&TransitionAnalysis) -> u64| parts.iter().map(f).sum();
        Self::from_counts(sum(|p| p.errors), sum(|p| p.near_transition), sum(|p| p.adjacent_confusions))
    }
}

/// Share of erroneous frames lying within `margin` frames of a ground-truth
/// class change (the first frame of a new segment), and share whose
/// prediction is the class of the previous or next ground-truth segment.
pub fn transition_error_share(predictions: &[u8], labels: &[u8], margin: usize) -> Result<TransitionAnalysis> {
    same_len(predictions.len(), labels.len())?;
    let segs = segment(labels);
    let changes: Vec<usize> = segs.iter().skip(1).map(|s| s.start).collect();
    let (mut errors, mut near, mut adjacent) = (0, 0, 0);
    for (k, seg) in segs.iter().enumerate() {
        let prev = k.checked_sub(1).map(|i| segs[i].class);
        let next = segs.get(k + 1).map(|s| s.class);
        for pos in seg.start..=seg.end {
            let p = predictions[pos];
            if p == labels[pos] {
                continue;
            }
            errors += 1;
            let at = changes.partition_point(|&c| c < pos.saturating_sub(margin));
            if changes.get(at).is_some_and(|&c| c <= pos + margin) {
                near += 1;
            }
            if Some(p) == prev || Some(p) == next {
                adjacent += 1;
            }
        }
    }
    Ok(TransitionAnalysis::from_counts(errors, near, adjacent))
}

/// Centered majority vote over `k` frames (truncated at the edges). A frame
/// keeps its value unless another class is strictly more frequent than
/// every other candidate including the original.
pub fn smooth(predictions: &[u8], k: usize) -> Result<Vec<u8>> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::EvenWindow(k));
    }
    check_classes(predictions)?;
    let h = k / 2;
    let n = predictions.len();
    let mut counts = [0usize; NUM_CLASSES];
    let mut out = Vec::with_capacity(n);
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..n {
        let (want_lo, want_hi) = (i.saturating_sub(h), (i + h + 1).min(n));
        while hi < want_hi {
            counts[predictions[hi] as usize] += 1;
            hi += 1;
        }
        while lo < want_lo {
            counts[predictions[lo] as usize] -= 1;
            lo += 1;
        }
        let orig = predictions[i];
        let best = *counts.iter().max().unwrap();
        let winners = counts.iter().filter(|&&c| c == best).count();
        let value = if counts[orig as usize] == best || winners > 1 {
            orig
        } else {
            counts.iter().position(|&c| c == best).unwrap() as u8
        };
        out.push(value);
    }
    Ok(out)
}

/// A maximal run `start..=end` of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub class: u8,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn segment(sequence: &[u8]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (i, &c) in sequence.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.class == c => s.end = i,
            _ => out.push(Segment { class: c, start: i, end: i }),
        }
    }
    out
}

pub fn flatten_segments(segments: &[Segment]) -> Vec<u8> {
    segments.iter().flat_map(|s| std::iter::repeat_n(s.class, s.len())).collect()
}

/// Seconds between successive starts of `anchor` segments.
pub fn cycle_times(segments: &[Segment], anchor: u8, fps: f64) -> Vec<f64> {
    let starts: Vec<usize> = segments.iter().filter(|s| s.class == anchor).map(|s| s.start).collect();
    starts.windows(2).map(|w| (w[1] - w[0]) as f64 / fps).collect()
}
