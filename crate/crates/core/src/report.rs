//! Evaluation report bundle: tables as CSV, a JSON summary, and SVG charts
//! of per-class F1/support, per-worker accuracy and temporal profiles.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    class_report, confusion_matrix, cycle_times, grouped_accuracy, segment, smooth, temporal_profile,
    transition_error_share, ClassReport, ConfusionMatrix, GroupAccuracy, TemporalProfile, TransitionAnalysis,
};
use crate::nn::TrainHistory;
use crate::pipeline::FramePrediction;
use crate::skeleton::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub n_bins: usize,
    /// Transition margin in frames.
    pub margin: usize,
    /// Majority-smoothing window applied before cycle extraction.
    pub smooth_k: usize,
    /// Cycle anchor; defaults to the non-error class with the highest recall.
    pub anchor_class: Option<u8>,
    /// Rate of the evaluated frame sequence (fps divided by the eval hop).
    pub rate_hz: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { n_bins: 10, margin: 15, smooth_k: 15, anchor_class: None, rate_hz: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRow {
    pub video_id: String,
    pub source: String,
    pub start: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: u64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub class_report: ClassReport,
    pub recall_ranking: Vec<u8>,
    pub per_worker: BTreeMap<String, GroupAccuracy>,
    pub per_video: BTreeMap<String, GroupAccuracy>,
    pub temporal: TemporalProfile,
    pub transition: TransitionAnalysis,
    pub anchor_class: u8,
    pub cycles: Vec<CycleRow>,
    pub mean_cycle_truth_s: Option<f64>,
    pub mean_cycle_predicted_s: Option<f64>,
    pub options: ReportOptions,
}

/// Rows grouped by video in first-appearance order, each sorted by frame.
pub fn by_video(rows: &[FramePrediction]) -> Vec<(String, Vec<&FramePrediction>)> {
    let mut order: Vec<(String, Vec<&FramePrediction>)> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows {
        let i = *index.entry(&r.video_id).or_insert_with(|| {
            order.push((r.video_id.clone(), Vec::new()));
            order.len() - 1
        });
        order[i].1.push(r);
    }
    for (_, v) in order.iter_mut() {
        v.sort_by_key(|r| r.frame_index);
    }
    order
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn build_report(rows: &[FramePrediction], opts: &ReportOptions) -> Result<EvalReport> {
    if !(opts.rate_hz > 0.0) {
        return Err(Error::InvalidConfig("report rate must be positive".into()));
    }
    let preds: Vec<u8> = rows.iter().map(|r| r.predicted).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let confusion = confusion_matrix(&preds, &labels)?;
    let report = class_report(&confusion);
    let ranking = report.recall_ranking();
    let anchor = opts.anchor_class.or_else(|| ranking.iter().copied().find(|&c| c != 0)).unwrap_or(1);
    if anchor as usize >= NUM_CLASSES {
        return Err(Error::LabelOutOfRange(i64::from(anchor)));
    }
    let workers: Vec<&str> = rows.iter().map(|r| r.worker_id.as_str()).collect();
    let videos: Vec<&str> = rows.iter().map(|r| r.video_id.as_str()).collect();
    let per_worker = grouped_accuracy(&preds, &labels, &workers)?.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let per_video = grouped_accuracy(&preds, &labels, &videos)?.into_iter().map(|(k, v)| (k.to_string(), v)).collect();

    let mut temporal = TemporalProfile::new(opts.n_bins);
    let mut transitions = Vec::new();
    let mut cycles = Vec::new();
    let (mut truth_all, mut pred_all) = (Vec::new(), Vec::new());
    for (video, seq) in by_video(rows) {
        let p: Vec<u8> = seq.iter().map(|r| r.predicted).collect();
        let l: Vec<u8> = seq.iter().map(|r| r.label).collect();
        temporal.add(&temporal_profile(&p, &l, opts.n_bins)?);
        transitions.push(transition_error_share(&p, &l, opts.margin)?);
        let truth_segs = segment(&l);
        let pred_segs = segment(&smooth(&p, opts.smooth_k)?);
        for (source, segs, all) in [("truth", &truth_segs, &mut truth_all), ("predicted", &pred_segs, &mut pred_all)] {
            let starts: Vec<usize> = segs.iter().filter(|s| s.class == anchor).map(|s| s.start).collect();
            let times = cycle_times(segs, anchor, opts.rate_hz);
            for (start, seconds) in starts.iter().zip(&times) {
                cycles.push(CycleRow { video_id: video.clone(), source: source.into(), start: *start, seconds: *seconds });
            }
            all.extend(times);
        }
    }
    Ok(EvalReport {
        frames: confusion.total(),
        accuracy: confusion.accuracy(),
        class_report: report,
        recall_ranking: ranking,
        confusion,
        per_worker,
        per_video,
        temporal,
        transition: TransitionAnalysis::combine(&transitions),
        anchor_class: anchor,
        cycles,
        mean_cycle_truth_s: mean(&truth_all),
        mean_cycle_predicted_s: mean(&pred_all),
        options: *opts,
    })
}

fn write(dir: &Path, name: &str, text: String) -> Result<()> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

impl EvalReport {
    pub fn class_report_csv(&self) -> String {
        let mut s = String::from("class_id,precision,recall,f1,support,degenerate\n");
        for m in &self.class_report.classes {
            let _ = writeln!(s, "{},{},{},{},{},{}", m.class, m.precision, m.recall, m.f1, m.support, m.degenerate);
        }
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true_class");
        for c in 0..NUM_CLASSES {
            let _ = write!(s, ",pred_{c}");
        }
        s.push('\n');
        for (t, row) in self.confusion.counts.iter().enumerate() {
            let _ = write!(s, "{t}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn group_csv(&self) -> String {
        let mut s = String::from("group_kind,group,accuracy,correct,frames\n");
        for (kind, map) in [("worker", &self.per_worker), ("video", &self.per_video)] {
            for (g, a) in map {
                let _ = writeln!(s, "{kind},{g},{},{},{}", a.accuracy, a.correct, a.frames);
            }
        }
        s
    }

    pub fn temporal_csv(&self) -> String {
        let mut s = String::from("class_id,bin,correct,total,accuracy\n");
        for c in 0..NUM_CLASSES {
            for b in 0..self.temporal.n_bins {
                let acc = self.temporal.accuracy(c, b).map_or(String::new(), |a| a.to_string());
                let _ = writeln!(s, "{c},{b},{},{},{acc}", self.temporal.correct[c][b], self.temporal.total[c][b]);
            }
        }
        s
    }

    pub fn transition_csv(&self) -> String {
        let t = &self.transition;
        format!(
            "margin_frames,errors,near_transition,adjacent_confusions,share_near_transition,adjacent_confusion_rate\n{},{},{},{},{},{}\n",
            self.options.margin, t.errors, t.near_transition, t.adjacent_confusions, t.share_near_transition, t.adjacent_confusion_rate
        )
    }

    pub fn cycles_csv(&self) -> String {
        let mut s = String::from("video_id,source,anchor_class,start,cycle_s\n");
        for c in &self.cycles {
            let _ = writeln!(s, "{},{},{},{},{}", c.video_id, c.source, self.anchor_class, c.start, c.seconds);
        }
        s
    }

    /// Writes every table, the JSON summary and the SVG charts into `dir`.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write(dir, "class_report.csv", self.class_report_csv())?;
        write(dir, "confusion.csv", self.confusion_csv())?;
        write(dir, "group_accuracy.csv", self.group_csv())?;
        write(dir, "temporal_profile.csv", self.temporal_csv())?;
        write(dir, "transition.csv", self.transition_csv())?;
        write(dir, "cycle_times.csv", self.cycles_csv())?;
        write(dir, "summary.json", serde_json::to_string_pretty(self)? + "\n")?;
        write(dir, "class_f1.svg", self.class_svg())?;
        write(dir, "worker_accuracy.svg", self.worker_svg())?;
        write(dir, "temporal_profile.svg", self.temporal_svg())?;
        Ok(())
    }

    pub fn class_svg(&self) -> String {
        let bars: Vec<Bar> = self
            .class_report
            .classes
            .iter()
            .map(|m| Bar { label: m.class.to_string(), value: m.f1, note: format!("n={}", m.support) })
            .collect();
        bar_chart("F1 score and support per class", &bars)
    }

    pub fn worker_svg(&self) -> String {
        let bars: Vec<Bar> = self
            .per_worker
            .iter()
            .map(|(w, a)| Bar { label: w.clone(), value: a.accuracy, note: format!("{:.1}%", 100.0 * a.accuracy) })
            .collect();
        bar_chart("Frame accuracy per worker", &bars)
    }

    pub fn temporal_svg(&self) -> String {
        let series: Vec<(String, Vec<Option<f64>>)> = (0..NUM_CLASSES)
            .filter(|&c| self.temporal.total[c].iter().any(|&t| t > 0))
            .map(|c| (format!("class {c}"), (0..self.temporal.n_bins).map(|b| self.temporal.accuracy(c, b)).collect()))
            .collect();
        line_chart("Accuracy over normalized position within a segment", "position bin", &series, 0.0, 1.0)
    }
}

pub struct Bar {
    pub label: String,
    pub value: f64,
    pub note: String,
}

const W: f64 = 720.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const PALETTE: [&str; 10] =
    ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"];

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r##"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="#333"/>"##, H - PAD, W - PAD / 2.0, H - PAD);
    let _ = writeln!(s, r##"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="#333"/>"##, H - PAD);
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = H - PAD - v * (H - 2.0 * PAD);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, PAD - 4.0, y + 4.0);
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Vertical bars over a 0..1 axis.
pub fn bar_chart(title: &str, bars: &[Bar]) -> String {
    let mut s = svg_open(title);
    let n = bars.len().max(1) as f64;
    let slot = (W - 1.5 * PAD) / n;
    for (i, b) in bars.iter().enumerate() {
        let h = b.value.clamp(0.0, 1.0) * (H - 2.0 * PAD);
        let x = PAD + i as f64 * slot + slot * 0.15;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
            H - PAD - h,
            slot * 0.7,
            PALETTE[0]
        );
        let cx = x + slot * 0.35;
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, H - PAD + 14.0, escape(&b.label));
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, H - PAD - h - 4.0, escape(&b.note));
    }
    s.push_str("</svg>\n");
    s
}

/// Polylines over equally spaced x positions; `None` points break a line.
pub fn line_chart(title: &str, x_label: &str, series: &[(String, Vec<Option<f64>>)], lo: f64, hi: f64) -> String {
    let mut s = svg_open(title);
    let points = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(2);
    let x_of = |i: usize| PAD + i as f64 * (W - 2.5 * PAD - 80.0) / (points - 1) as f64;
    let y_of = |v: f64| H - PAD - ((v - lo) / (hi - lo)).clamp(0.0, 1.0) * (H - 2.0 * PAD);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 8.0, escape(x_label));
    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut path = String::new();
        let mut pen_down = false;
        for (i, v) in values.iter().enumerate() {
            match v {
                Some(v) => {
                    let _ = write!(path, "{}{:.1},{:.1} ", if pen_down { "L" } else { "M" }, x_of(i), y_of(*v));
                    pen_down = true;
                }
                None => pen_down = false,
            }
        }
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.trim_end());
        let ly = PAD + 14.0 * k as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" fill="{color}">{}</text>"#, W - PAD - 70.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Loss and accuracy curves of a training run.
pub fn history_svg(history: &TrainHistory) -> String {
    let max_loss = history
        .epochs
        .iter()
        .flat_map(|e| [Some(e.train_loss), e.val_loss])
        .flatten()
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let scale = |v: f64| v / max_loss;
    let series = vec![
        ("train loss".to_string(), history.epochs.iter().map(|e| Some(scale(e.train_loss))).collect()),
        ("val loss".to_string(), history.epochs.iter().map(|e| e.val_loss.map(scale)).collect()),
        ("train acc".to_string(), history.epochs.iter().map(|e| Some(e.train_accuracy)).collect()),
        ("val acc".to_string(), history.epochs.iter().map(|e| e.val_accuracy).collect()),
    ];
    line_chart(&format!("Training history (loss scaled by {max_loss:.3})"), "epoch", &series, 0.0, 1.0)
}

pub fn write_predictions<W: std::io::Write>(mut sink: W, rows: &[FramePrediction]) -> Result<()> {
    writeln!(sink, "video_id,worker_id,frame_index,label,predicted")?;
    for r in rows {
        writeln!(sink, "{},{},{},{},{}", r.video_id, r.worker_id, r.frame_index, r.label, r.predicted)?;
    }
    Ok(())
}
