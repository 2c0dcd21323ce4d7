use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mpar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpar")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SYNTH: &str = r#"
duration_s = 24.0
workers = [
  { id = "w1", speed = 1.0, amplitude = 1.0, noise_sigma = 0.002, wrist_offset_deg = 0.0, error_scale = 1.0 },
  { id = "w2", speed = 1.1, amplitude = 0.9, noise_sigma = 0.002, wrist_offset_deg = 3.0, error_scale = 1.0 },
]
holdout_worker = "w2"
"#;

const RUN: &str = r#"
holdout_workers = ["w2"]

[window]
fps = 15
length = 10
train_hop = 2

[model]
family = "td_dense"
td_units = [8]
dense_units = [16]

[train]
learning_rate = 0.003
epochs = 2
batch_size = 32
"#;

fn synth(dir: &Path) -> String {
    let spec = dir.join("spec.toml");
    fs::write(&spec, SYNTH).unwrap();
    let data = dir.join("data");
    let o = mpar(&["synth", "--config", spec.to_str().unwrap(), "--out", data.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    data.to_str().unwrap().to_string()
}

fn train(dir: &Path, data: &str, name: &str) -> String {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, RUN).unwrap();
    let model = dir.join(name);
    let o = mpar(&["train", "--config", cfg.to_str().unwrap(), "--data", data, "--out", model.to_str().unwrap(), "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    model.to_str().unwrap().to_string()
}

#[test]
fn help_lists_every_flag() {
    let cases: [(&str, &[&str]); 7] = [
        ("synth", &["--config", "--out", "--seed"]),
        ("check", &["--data", "--config", "--fps", "--window"]),
        ("train", &["--config", "--data", "--out", "--seed", "--fps", "--window"]),
        ("search", &["--space", "--config", "--data", "--out", "--budget", "--seed", "--jobs", "--strategy", "--stages"]),
        ("eval", &["--model", "--data", "--out", "--fps", "--window", "--anchor-class", "--margin", "--smooth"]),
        ("predict", &["--model", "--data", "--out"]),
        ("report", &["--data", "--out"]),
    ];
    for (cmd, flags) in cases {
        let o = mpar(&[cmd, "--help"]);
        assert!(o.status.success());
        let text = String::from_utf8_lossy(&o.stdout);
        for f in flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn usage_errors_exit_2_with_prefix() {
    let o = mpar(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]: "), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn malformed_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, RUN.replace("train_hop", "trian_hop")).unwrap();
    let o = mpar(&["train", "--config", cfg.to_str().unwrap(), "--data", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error[invalid_config]: "), "{err}");
    assert!(err.contains("trian_hop"), "{err}");
}

#[test]
fn missing_files_are_runtime_failures() {
    let o = mpar(&["predict", "--model", "/nonexistent/model.mpar", "--data", "-"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[io]: "));
}

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = synth(d);
    assert!(Path::new(&data).join("ground_truth.csv").exists());
    assert!(Path::new(&data).join("expectations.json").exists());

    let o = mpar(&["check", "--data", &data, "--fps", "15", "--window", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ok videos 2"));

    let model = train(d, &data, "model.mpar");
    assert!(d.join("model.history.csv").exists());
    assert!(d.join("model.metrics.json").exists());
    let again = train(d, &data, "again.mpar");
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());

    let report = d.join("report");
    let o = mpar(&["eval", "--model", &model, "--data", &data, "--out", report.to_str().unwrap(), "--anchor-class", "1", "--margin", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["class_report.csv", "group_accuracy.csv", "temporal_profile.csv", "transition.csv", "cycle_times.csv", "summary.json", "class_f1.svg", "predictions.csv"] {
        assert!(report.join(f).exists(), "{f}");
    }
    let o = mpar(&["eval", "--model", &model, "--data", &data, "--out", report.to_str().unwrap(), "--fps", "30"]);
    assert_eq!(o.status.code(), Some(2));

    let stream = Path::new(&data).join("w1_v1.frames.csv");
    let preds = d.join("preds.csv");
    let o = mpar(&["predict", "--model", &model, "--data", stream.to_str().unwrap(), "--out", preds.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&preds).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 24 * 15);
    assert!(rows[..9].iter().all(|r| r.contains(",insufficient_history,")));
    assert!(rows[9..].iter().all(|r| r.contains(",ok,")));

    let plots = d.join("plots");
    let o = mpar(&["report", "--data", d.join("model.history.csv").to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(plots.join("history.svg").exists());
}

#[test]
fn search_writes_log_and_best_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = synth(d);
    let space = d.join("space.toml");
    fs::write(
        &space,
        r#"
[[dimension]]
name = "fps"
kind = "categorical"
options = [10, 15]

[[dimension]]
name = "window_len"
kind = "int_range"
lo = 6
hi = 12

[[dimension]]
name = "td_units"
kind = "int_range"
lo = 4
hi = 12

[[dimension]]
name = "learning_rate"
kind = "log_uniform"
lo = 0.001
hi = 0.01
"#,
    )
    .unwrap();
    let cfg = d.join("run.toml");
    fs::write(&cfg, RUN).unwrap();
    let out = d.join("search");
    let o = mpar(&[
        "search", "--space", space.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--data", &data, "--out",
        out.to_str().unwrap(), "--budget", "4", "--jobs", "2", "--stages", "2", "--seed", "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(out.join("run_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let best = fs::read_to_string(out.join("best_config.toml")).unwrap();
    let td_line = best.lines().find(|l| l.starts_with("td_units")).unwrap();
    assert_ne!(td_line, "td_units = [8]", "sampled width must reach the model");
    assert!(out.join("stage_2_space.toml").exists());

    let plots = d.join("plots");
    let o = mpar(&["report", "--data", out.join("run_log.jsonl").to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(plots.join("trials.csv").exists() && plots.join("search_progress.svg").exists());
}
