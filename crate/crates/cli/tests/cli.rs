use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lgg_core::data::{load_dataset, read_manifest};
use lgg_core::interpret::import_topomap;

fn lgg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgg"))
        .args(args)
        .env("LGG_LOG", "info")
        .output()
        .expect("run lgg")
}

fn ok(args: &[&str]) -> Output {
    let out = lgg(args);
    assert!(
        out.status.success(),
        "lgg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").canonicalize().unwrap()
}

/// Desk montage and data shape with a short schedule.
fn tiny_config(dir: &Path) -> PathBuf {
    let montage = configs().join("desk_montage.txt");
    let text = format!(
        "dimension = \"arousal\"\ngraph = \"{}\"\n\n\
         [model]\npool_window = 4\npool_stride = 4\npool2_window = 4\npool2_stride = 4\nhidden = 8\n\n\
         [train]\nstage1_epochs = 2\nstage2_epochs = 1\ninner_folds = 3\n\n\
         [synth]\nchannels = 16\ntrials = 8\nsample_rate = 32.0\nduration = 2.0\n\
         discriminative = [0, 5, 10, 15]\nfrequency = 6.0\namplitude = 2.0\n",
        montage.display()
    );
    let path = dir.join("tiny.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn tiny_run(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = tiny_config(dir);
    let data = dir.join("data");
    let run = dir.join("run");
    ok(&["synth", "--out", s(&data), "--config", s(&cfg)]);
    ok(&["train", "--data", s(&data), "--out", s(&run), "--config", s(&cfg)]);
    (cfg, data, run)
}

#[test]
fn synth_writes_manifest_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["synth", "--out", s(out), "--seed", "3", "--channels", "8", "--discriminative", "1,2"]);
    }
    let manifest = read_manifest(&a).unwrap();
    assert_eq!(manifest.trials.len(), 40);
    assert_eq!(manifest.channels.len(), 8);
    let trial_files = std::fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "lggt"))
        .count();
    assert_eq!(trial_files, 40);
    for e in &manifest.trials {
        assert_eq!(std::fs::read(a.join(&e.file)).unwrap(), std::fs::read(b.join(&e.file)).unwrap());
    }
    let bad = lgg(&["synth", "--out", s(&dir.path().join("c")), "--trials", "0"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn train_eval_saliency_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data, run) = tiny_run(dir.path());
    let report_path = run.join("subject_01").join("report.toml");
    let report: toml::Table = toml::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let cv = report["cv"].as_table().unwrap();
    let folds: Vec<f64> = cv["fold_accuracy"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_float().unwrap())
        .collect();
    assert_eq!(folds.len(), 8);
    assert!(run.join("summary.toml").is_file());

    // each fold checkpoint reproduces its accuracy on its own test trial
    let (_, trials) = load_dataset(&data).unwrap();
    for (fold, t) in trials.iter().enumerate() {
        let ckpt = run.join("subject_01").join(format!("fold_{fold:02}.ckpt"));
        let out = ok(&[
            "eval",
            "--checkpoint",
            s(&ckpt),
            "--data",
            s(&data),
            "--subject",
            "1",
            "--trials",
            &t.trial_id.to_string(),
        ]);
        let stdout = String::from_utf8_lossy(&out.stdout);
        let expect = format!("accuracy {:.4}", folds[fold]);
        assert!(stdout.contains(&expect), "fold {fold}: {stdout}");
    }

    let maps = dir.path().join("maps");
    let ckpt = run.join("subject_01").join("fold_00.ckpt");
    ok(&[
        "saliency",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--trials",
        "1",
        "--out",
        s(&maps),
    ]);
    let single = import_topomap(&maps.join("saliency_s01_t01.csv")).unwrap();
    let agg = import_topomap(&maps.join("saliency_aggregate.csv")).unwrap();
    assert_eq!(single.channels.len(), 16);
    assert!(single.scores.iter().all(|v| (0.0..=1.0).contains(v)));
    for (a, b) in single.scores.iter().zip(&agg.scores) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(std::fs::read_dir(&maps).unwrap().count(), 2);

    // the saved run config reproduces the report exactly
    let again = dir.path().join("again");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&again),
        "--config",
        s(&run.join("run_config.toml")),
    ]);
    assert_eq!(
        std::fs::read(&report_path).unwrap(),
        std::fs::read(again.join("subject_01").join("report.toml")).unwrap()
    );
}

#[test]
fn train_prints_subject_mean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--config", s(&cfg)]);
    let out = ok(&["train", "--data", s(&data), "--out", s(&dir.path().join("run")), "--config", s(&cfg)]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("subject 1 arousal: mean accuracy"), "{stdout}");
    assert!(stdout.contains("over 8 folds"), "{stdout}");
}

#[test]
fn affective_graph_on_standard_channels() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--trials", "10", "--duration", "1"]);
    let cfg = dir.path().join("short.toml");
    std::fs::write(
        &cfg,
        "[train]\nstage1_epochs = 1\nstage2_epochs = 1\ninner_folds = 2\n[model]\nhidden = 4\nkernels = 2\n",
    )
    .unwrap();
    let out = ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&dir.path().join("run")),
        "--config",
        s(&cfg),
        "--graph",
        "affective",
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("P = 13"), "{stderr}");
}

#[test]
fn configuration_and_protocol_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--config", s(&cfg)]);
    let run = s(&dir.path().join("run")).to_string();

    let both = lgg(&["train", "--data", s(&data), "--out", &run, "--config", s(&cfg), "--no-local", "--no-global"]);
    assert_eq!(both.status.code(), Some(2));

    let wrong_graph = lgg(&["train", "--data", s(&data), "--out", &run, "--config", s(&cfg), "--graph", "frontal"]);
    assert_eq!(wrong_graph.status.code(), Some(2));

    // [synth] is the last table, so the appended key lands in it
    let high_cfg = dir.path().join("high.toml");
    let text = std::fs::read_to_string(&cfg).unwrap() + "high_fraction = 1.0\n";
    std::fs::write(&high_cfg, text).unwrap();
    let one_class = dir.path().join("one_class_high");
    ok(&["synth", "--out", s(&one_class), "--config", s(&high_cfg)]);
    let single = lgg(&["train", "--data", s(&one_class), "--out", &run, "--config", s(&cfg)]);
    assert_eq!(single.status.code(), Some(4), "{}", String::from_utf8_lossy(&single.stderr));

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let missing = lgg(&["train", "--data", s(&empty), "--out", &run, "--config", s(&cfg)]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn eval_rejects_mismatched_channels() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, run) = tiny_run(dir.path());
    let other = dir.path().join("other");
    ok(&["synth", "--out", s(&other), "--channels", "8", "--discriminative", "1", "--trials", "2"]);
    let out = lgg(&[
        "eval",
        "--checkpoint",
        s(&run.join("subject_01").join("fold_00.ckpt")),
        "--data",
        s(&other),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest mismatch"));
}

#[test]
fn preprocess_binary_and_text_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&[
        "synth",
        "--out",
        s(&raw),
        "--channels",
        "4",
        "--discriminative",
        "0",
        "--trials",
        "2",
        "--sample-rate",
        "512",
        "--duration",
        "5",
        "--frequency",
        "10",
    ]);
    let pre = dir.path().join("pre");
    ok(&["preprocess", "--input", s(&raw), "--out", s(&pre)]);
    let (manifest, trials) = load_dataset(&pre).unwrap();
    assert_eq!(manifest.sample_rate, 128.0);
    assert!(trials.iter().all(|t| t.signal.shape() == [4, 256]));

    let text = dir.path().join("text");
    std::fs::create_dir(&text).unwrap();
    for trial in 1..=2 {
        let mut body = String::from("A,B,C\n");
        for c in 0..3 {
            let row: Vec<String> = (0..2560).map(|i| format!("{}", ((i * (c + 1)) as f64 * 0.1).sin())).collect();
            body += &(row.join(",") + "\n");
        }
        std::fs::write(text.join(format!("t{trial}.csv")), body).unwrap();
        std::fs::write(
            text.join(format!("t{trial}.toml")),
            format!("sample_rate = 512.0\nsubject = 1\ntrial = {trial}\n[ratings]\narousal = 7.0\n"),
        )
        .unwrap();
    }
    let pre_text = dir.path().join("pre_text");
    ok(&["preprocess", "--from-text", s(&text), "--out", s(&pre_text)]);
    let (manifest, trials) = load_dataset(&pre_text).unwrap();
    assert_eq!(manifest.channels, ["A", "B", "C"]);
    assert_eq!(trials.len(), 2);
    assert!(trials.iter().all(|t| t.signal.shape() == [3, 256]));
}
