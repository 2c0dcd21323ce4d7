use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, LineWriter, Read, Write};
use std::path::{Path, PathBuf};

use mpar_core::config::RunConfig;
use mpar_core::ingest::{
    apply_labels, emulate_fps, parse_label_table, read_dataset_dir, FrameReader, VideoStream, SOURCE_FPS,
};
use mpar_core::nn::{load_model, save_model, TrainHistory};
use mpar_core::pipeline::{evaluate_streams, run};
use mpar_core::predict::{StreamOutput, StreamingPredictor};
use mpar_core::report::{build_report, history_svg, line_chart, write_predictions, ReportOptions};
use mpar_core::search::{apply, search as run_search, Constraints, ParamSpace, PipelineObjective, SearchConfig, Strategy, TrialRecord};
use mpar_core::skeleton::NUM_CLASSES;
use mpar_core::synth::{describe, generate, write_dataset, SynthSpec};
use mpar_core::{Error, Result};
use serde_json::json;

use crate::{CheckArgs, EvalArgs, PredictArgs, ReportArgs, SearchArgs, StrategyArg, SynthArgs, TrainArgs};

fn io_err(path: &Path, e: io::Error) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// A dataset directory, or one frame-record file with an optional sibling
/// label table.
fn load_videos(path: &Path) -> Result<Vec<VideoStream>> {
    if path.is_dir() {
        return read_dataset_dir(path);
    }
    let reader = FrameReader::new(open(path)?)?;
    let mut frames = reader.collect::<Result<Vec<_>>>()?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if let Some(stem) = name.strip_suffix(".frames.csv") {
        let labels = path.with_file_name(format!("{stem}.labels.csv"));
        if labels.exists() {
            apply_labels(&mut frames, &parse_label_table(open(&labels)?)?)?;
        }
    }
    Ok(VideoStream::group(frames))
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn data_path(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.data.clone())
        .ok_or_else(|| Error::InvalidConfig("no dataset: pass --data or set `data` in the config".into()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let spec = match &args.config {
        Some(p) => SynthSpec::from_toml(&fs::read_to_string(p).map_err(|e| io_err(p, e))?)?,
        None => SynthSpec::default(),
    };
    let data = generate(&spec, args.seed)?;
    write_dataset(&data, &args.out)?;
    write_text(&args.out.join("synth_spec.toml"), &spec.to_toml()?)?;
    let expectations = serde_json::to_string_pretty(&describe(&spec)?)? + "\n";
    write_text(&args.out.join("expectations.json"), &expectations)?;
    let frames: usize = data.videos.iter().map(|v| v.stream.frames.len()).sum();
    println!("videos {} frames {frames} out {}", data.videos.len(), args.out.display());
    Ok(())
}

pub fn check(args: CheckArgs) -> Result<()> {
    let cfg = args.config.as_deref().map(RunConfig::load).transpose()?;
    let fps = args.fps.or(cfg.as_ref().map(|c| c.window.fps)).unwrap_or(SOURCE_FPS);
    let window = args.window.or(cfg.as_ref().map(|c| c.window.length)).unwrap_or(104);
    if window == 0 {
        return Err(Error::InvalidConfig("window length must be positive".into()));
    }
    let videos = load_videos(&args.data)?;
    let mut classes = [0u64; NUM_CLASSES];
    let mut total_windows = 0;
    for v in &videos {
        let n = v.frames.len();
        let missing = |s: usize| v.frames.iter().filter(|f| f.slots[s].is_none()).count() as f64 / n.max(1) as f64;
        let unlabeled = v.frames.iter().filter(|f| f.label.is_none()).count();
        for f in &v.frames {
            if let Some(c) = f.label {
                classes[c.index()] += 1;
            }
        }
        let windows = emulate_fps(&v.frames, SOURCE_FPS, fps)?.len().saturating_sub(window - 1);
        total_windows += windows;
        println!(
            "video {} worker {} frames {n} unlabeled {unlabeled} missing_slot0 {:.4} missing_slot1 {:.4} windows {windows}",
            v.video_id,
            v.worker_id,
            missing(0),
            missing(1)
        );
    }
    let hist: Vec<String> = classes.iter().enumerate().map(|(c, n)| format!("{c}:{n}")).collect();
    println!("classes {}", hist.join(" "));
    println!("ok videos {} windows {total_windows} fps {fps} window {window}", videos.len());
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_ref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(fps) = args.fps {
        cfg.window.fps = fps;
    }
    if let Some(w) = args.window {
        cfg.window.length = w;
    }
    cfg.validate()?;
    let videos = load_videos(&data_path(args.data, &cfg)?)?;
    let outcome = run(&videos, &cfg)?;
    save_model(&outcome.model, &args.out)?;
    let mut history = create(&sibling(&args.out, "history.csv"))?;
    outcome.history.write_csv(&mut history)?;
    history.flush()?;
    let metrics = json!({
        "param_count": outcome.model.param_count(),
        "train_windows": outcome.train_windows,
        "epochs": outcome.history.epochs.len(),
        "val_accuracy": outcome.val.as_ref().map(|e| e.accuracy),
        "val_loss": outcome.val.as_ref().map(|e| e.loss),
        "holdout_accuracy": outcome.holdout.as_ref().map(|e| e.accuracy),
        "holdout_loss": outcome.holdout.as_ref().map(|e| e.loss),
    });
    write_text(&sibling(&args.out, "metrics.json"), &(serde_json::to_string_pretty(&metrics)? + "\n"))?;
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "model {} params {} val_accuracy {} holdout_accuracy {} time {:.1}s",
        args.out.display(),
        outcome.model.param_count(),
        show(outcome.val.as_ref().map(|e| e.accuracy)),
        show(outcome.holdout.as_ref().map(|e| e.accuracy)),
        outcome.wall_time_s
    );
    Ok(())
}

pub fn search(args: SearchArgs) -> Result<()> {
    let space = match &args.space {
        Some(p) => ParamSpace::load(p)?,
        None => ParamSpace::pipeline(),
    };
    let base = load_config(args.config.as_ref())?;
    let videos = load_videos(&data_path(args.data, &base)?)?;
    let strategy = match args.strategy {
        StrategyArg::Random => Strategy::Random,
        StrategyArg::SurrogateGuided => Strategy::SurrogateGuided,
    };
    let mut cfg = SearchConfig::new(args.budget, strategy, args.seed);
    cfg.stages = args.stages;
    cfg.top_quantile = args.top_quantile;
    cfg.constraints = Constraints {
        max_history_s: (!args.no_history_limit).then_some(args.max_history),
        generalization_only: args.generalization_only,
    };
    cfg.validate()?;
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let mut log = create(&args.out.join("run_log.jsonl"))?;
    let objective = PipelineObjective { base: base.clone(), videos: &videos };
    let result = run_search(&space, &objective, &cfg, args.jobs, Some(&mut log))?;
    log.flush()?;
    for (k, s) in result.stage_spaces.iter().enumerate() {
        write_text(&args.out.join(format!("stage_{}_space.toml", k + 1)), &s.to_toml()?)?;
    }
    let best = result.best.ok_or(Error::NoSuccessfulTrials)?;
    write_text(&args.out.join("best_config.toml"), &apply(&base, &best.config)?.to_toml()?)?;
    write_text(&args.out.join("best_trial.json"), &(serde_json::to_string_pretty(&best)? + "\n"))?;
    let failed = result.trials.iter().filter(|t| !t.ok).count();
    println!(
        "trials {} failed {failed} best_index {} val_accuracy {:.4} params {}",
        result.trials.len(),
        best.index,
        best.val_accuracy,
        best.param_count
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let m = model.manifest;
    if args.fps.is_some_and(|f| f != m.fps) || args.window.is_some_and(|w| w != m.window_len) {
        return Err(Error::InvalidConfig(format!(
            "model expects {} fps and windows of {} frames",
            m.fps, m.window_len
        )));
    }
    let mut videos = load_videos(&args.data)?;
    if !args.workers.is_empty() {
        videos.retain(|v| args.workers.contains(&v.worker_id));
    }
    let (rows, _) = evaluate_streams(&model, &videos, 1)?;
    let opts = ReportOptions {
        n_bins: args.bins,
        margin: args.margin,
        smooth_k: args.smooth,
        anchor_class: args.anchor_class,
        rate_hz: f64::from(m.fps),
    };
    let report = build_report(&rows, &opts)?;
    report.write_bundle(&args.out)?;
    let mut preds = create(&args.out.join("predictions.csv"))?;
    write_predictions(&mut preds, &rows)?;
    preds.flush()?;
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    println!(
        "frames {} accuracy {:.4} transition_share {:.3} anchor {} cycle_truth_s {} cycle_predicted_s {}",
        report.frames,
        report.accuracy,
        report.transition.share_near_transition,
        report.anchor_class,
        show(report.mean_cycle_truth_s),
        show(report.mean_cycle_predicted_s)
    );
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let mut predictor = StreamingPredictor::new(&model)?;
    let input: Box<dyn Read> = if args.data.as_os_str() == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(open(&args.data)?)
    };
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(LineWriter::new(io::stdout().lock())),
    };
    writeln!(out, "video_id,frame_index,status,predicted,confidence")?;
    for frame in FrameReader::new(input)? {
        let frame = frame?;
        match predictor.push(&frame)? {
            None => {}
            Some(StreamOutput::InsufficientHistory) => {
                writeln!(out, "{},{},insufficient_history,,", frame.video_id, frame.frame_index)?;
            }
            Some(StreamOutput::Predicted { class, confidence }) => {
                writeln!(out, "{},{},ok,{},{confidence:.6}", frame.video_id, frame.frame_index, class.id())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<()> {
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    if args.data.extension().is_some_and(|e| e == "jsonl") {
        let trials = read_log(&args.data)?;
        let mut w = csv::Writer::from_writer(create(&args.out.join("trials.csv"))?);
        let csv_err = |e: csv::Error| Error::Io(io::Error::other(e));
        w.write_record(["index", "stage", "ok", "val_accuracy", "val_loss", "param_count", "wall_time_s", "seed", "error", "config"])
            .map_err(csv_err)?;
        for t in &trials {
            w.write_record([
                t.index.to_string(),
                t.stage.to_string(),
                t.ok.to_string(),
                t.val_accuracy.to_string(),
                t.val_loss.to_string(),
                t.param_count.to_string(),
                format!("{:.3}", t.wall_time_s),
                t.seed.to_string(),
                t.error.clone().unwrap_or_default(),
                serde_json::to_string(&t.config)?,
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        let mut best = f64::NEG_INFINITY;
        let running: Vec<Option<f64>> = trials
            .iter()
            .map(|t| {
                if t.ok {
                    best = best.max(t.val_accuracy);
                }
                best.is_finite().then_some(best)
            })
            .collect();
        let series = vec![
            ("val accuracy".to_string(), trials.iter().map(|t| t.ok.then_some(t.val_accuracy)).collect()),
            ("best so far".to_string(), running),
        ];
        write_text(&args.out.join("search_progress.svg"), &line_chart("Search progress", "trial", &series, 0.0, 1.0))?;
        println!("trials {} out {}", trials.len(), args.out.display());
    } else {
        let history = TrainHistory::read_csv(open(&args.data)?)?;
        write_text(&args.out.join("history.svg"), &history_svg(&history))?;
        println!("epochs {} out {}", history.epochs.len(), args.out.display());
    }
    Ok(())
}

fn read_log(path: &Path) -> Result<Vec<TrialRecord>> {
    open(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line?;
            serde_json::from_str(&line)
                .map_err(|e| Error::MalformedRow { line: i as u64 + 1, reason: e.to_string() })
        })
        .collect()
}
