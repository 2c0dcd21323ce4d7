use mpar_core::config::{RunConfig, WindowConfig};
use mpar_core::eval::{cycle_times, segment};
use mpar_core::pipeline::PreparedData;
use mpar_core::skeleton::{FrameRecord, NUM_CLASSES};
use mpar_core::synth::{describe, generate, SynthSpec};

#[test]
fn empirical_statistics_match_describe() {
    let mut spec = SynthSpec::default();
    spec.duration_s = 600.0;
    let expected = describe(&spec).unwrap();
    let data = generate(&spec, 17).unwrap();
    let mut absent = 0usize;
    let mut slots = 0usize;
    for (video, worker) in data.videos.iter().zip(&expected.workers) {
        assert_eq!(video.stream.worker_id, worker.worker_id);
        assert_eq!(video.stream.frames.len() as u64, expected.frames_per_video);
        let labels: Vec<u8> = video.stream.frames.iter().map(|f| f.label.unwrap().id()).collect();
        let cycles = cycle_times(&segment(&labels), expected.anchor_class.id(), f64::from(spec.fps));
        let mean = cycles.iter().sum::<f64>() / cycles.len() as f64;
        let rel = (mean - worker.cycle_s).abs() / worker.cycle_s;
        println!("{}: mean cycle {mean:.2}s, expected {:.2}s over {} cycles", worker.worker_id, worker.cycle_s, cycles.len());
        assert!(rel < 0.05, "{}: {mean} vs {}", worker.worker_id, worker.cycle_s);
        for f in &video.stream.frames {
            absent += 2 - f.present_hands();
            slots += 2;
        }
    }
    let rate = absent as f64 / slots as f64;
    assert!((rate - expected.dropout_rate).abs() < 0.01, "dropout {rate}");
}

fn features(f: &FrameRecord) -> Vec<f64> {
    f.slots.iter().flat_map(|s| s.as_ref().unwrap().coords()).map(f64::from).collect()
}

#[test]
fn classes_are_separable_across_workers() {
    let mut spec = SynthSpec::default();
    spec.duration_s = 120.0;
    spec.dropout = 0.0;
    let data = generate(&spec, 23).unwrap();
    let (train, test): (Vec<_>, Vec<_>) = data.videos.iter().partition(|v| v.stream.worker_id != "w9");

    let mut sums = vec![vec![0.0; 126]; NUM_CLASSES];
    let mut counts = vec![0usize; NUM_CLASSES];
    for f in train.iter().flat_map(|v| &v.stream.frames) {
        let c = f.label.unwrap().index();
        for (s, x) in sums[c].iter_mut().zip(features(f)) {
            *s += x;
        }
        counts[c] += 1;
    }
    let centroids: Vec<Vec<f64>> =
        sums.iter().zip(&counts).map(|(s, &n)| s.iter().map(|x| x / n.max(1) as f64).collect()).collect();

    let frames: Vec<&FrameRecord> = test.iter().flat_map(|v| &v.stream.frames).collect();
    let correct = frames
        .iter()
        .filter(|f| {
            let x = features(f);
            let nearest = (0..NUM_CLASSES)
                .min_by(|&a, &b| {
                    let d = |c: usize| centroids[c].iter().zip(&x).map(|(m, v)| (m - v).powi(2)).sum::<f64>();
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            nearest == f.label.unwrap().index()
        })
        .count();
    let accuracy = correct as f64 / frames.len() as f64;
    println!("nearest-centroid accuracy on the holdout worker: {accuracy:.3}");
    assert!(accuracy > 0.4, "{accuracy}");
}

#[test]
fn holdout_worker_never_reaches_training() {
    let mut spec = SynthSpec::with_workers(3);
    spec.duration_s = 20.0;
    let data = generate(&spec, 5).unwrap();
    let cfg = RunConfig {
        holdout_workers: vec!["w3".into()],
        window: WindowConfig { fps: 15, length: 20, train_hop: 3, eval_hop: 1, max_history_s: Some(3.5) },
        ..RunConfig::default()
    };
    let prepared = PreparedData::new(&data.streams(), &cfg).unwrap();
    let split = &prepared.split;
    let worker = |v: usize| split.streams[v].worker_id.as_str();
    assert!(!split.train.is_empty() && !split.val.is_empty() && !split.holdout.is_empty());
    assert!(split.train.iter().chain(&split.val).all(|s| worker(s.video) != "w3"));
    assert!(split.holdout.iter().all(|s| worker(s.video) == "w3"));
    for t in &split.train {
        assert!(split.val.iter().filter(|v| v.video == t.video).all(|v| v.end_frame > t.end_frame));
    }
}

#[test]
fn class_durations_match_configuration() {
    let mut spec = SynthSpec::with_workers(1);
    spec.duration_s = 1800.0;
    let expected = describe(&spec).unwrap();
    let data = generate(&spec, 31).unwrap();
    let labels: Vec<u8> = data.videos[0].stream.frames.iter().map(|f| f.label.unwrap().id()).collect();
    let runs: Vec<usize> = segment(&labels).iter().filter(|s| s.class == 3).map(|s| s.len()).collect();
    let mean = runs.iter().sum::<usize>() as f64 / runs.len() as f64 / f64::from(spec.fps);
    let configured = expected.workers[0].mean_duration_s[3];
    assert_eq!(configured, 2.0);
    assert!((mean - configured).abs() / configured < 0.05, "{mean} over {} segments", runs.len());
}
