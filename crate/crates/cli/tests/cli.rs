use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use auscult_cli::cli::{EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_INPUT};
use auscult_core::{read_wav, write_wav, AudioClip, Manifest, MelSpectrogram};

fn auscult(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_auscult")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = auscult(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

/// synth, preprocess and spectrogram for a small corpus; returns the image manifest.
fn front_half(root: &Path, dataset: &str, count: &str) -> PathBuf {
    let (raw, pre, spec) = (root.join("raw"), root.join("pre"), root.join("spec"));
    ok(&["synth", "--dataset", dataset, "--out", s(&raw), "--count", count, "--seconds", "3.5", "--seed", "3"]);
    ok(&["preprocess", "--dataset", dataset, "--manifest", s(&raw.join("manifest.csv")), "--out", s(&pre)]);
    ok(&["spectrogram", "--dataset", dataset, "--manifest", s(&pre.join("chunks.csv")), "--out", s(&spec)]);
    spec.join("images.csv")
}

#[test]
fn synth_rerun_identical_and_labels_match() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "synth",
            "--out",
            s(d),
            "--count",
            "10",
            "--categories",
            "normal,murmur",
            "--seconds",
            "3",
            "--seed",
            "9",
        ]);
    }
    let fa = files_under(&a);
    assert_eq!(fa.len(), 21);
    for f in &fa {
        let g = b.join(f.strip_prefix(&a).unwrap());
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(g).unwrap(), "{}", f.display());
    }
    let m = Manifest::read(&a.join("manifest.csv")).unwrap();
    for e in m.entries() {
        assert!(e.path.file_name().unwrap().to_str().unwrap().starts_with(&e.label));
    }
}

#[test]
fn dataset_b_chunks_keep_rate_and_frame_count() {
    let dir = tempfile::tempdir().unwrap();
    let images = front_half(dir.path(), "B", "2");
    let m = Manifest::read(&images).unwrap();
    assert_eq!(m.len(), 6);
    for e in m.entries() {
        assert_eq!(read_wav(&e.source).unwrap().sample_rate(), 4000);
        let mel = MelSpectrogram::read_raw(&e.path).unwrap();
        assert_eq!(mel.n_frames(), 119);
    }
    let png = dir.path().join("spec/png/normal_000_0.png");
    let decoder = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(png).unwrap()));
    let info = decoder.read_info().unwrap().info().clone();
    assert_eq!((info.width, info.height), (128, 128));
}

#[test]
fn dataset_a_is_decimated_and_short_files_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["synth", "--out", s(&raw), "--count", "2", "--categories", "normal", "--seconds", "3.5"]);
    let short = raw.join("short.wav");
    write_wav(&AudioClip::new(vec![0.01; 88200], 44100).unwrap(), &short).unwrap();
    let mut text = std::fs::read_to_string(raw.join("manifest.csv")).unwrap();
    text.push_str("short.wav,normal,A,,\n");
    std::fs::write(raw.join("manifest.csv"), text).unwrap();
    let pre = dir.path().join("pre");
    ok(&["preprocess", "--manifest", s(&raw.join("manifest.csv")), "--out", s(&pre)]);
    let chunks = Manifest::read(&pre.join("chunks.csv")).unwrap();
    assert_eq!(chunks.len(), 2);
    for e in chunks.entries() {
        assert_eq!(read_wav(&e.path).unwrap().sample_rate(), 4410);
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(pre.join("preprocess_report.json")).unwrap()).unwrap();
    assert_eq!(report["skipped"], 1);
    assert_eq!(report["files"][2]["status"], "too short");
}

#[test]
fn spectrogram_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let images = front_half(dir.path(), "B", "1");
    let first: Vec<Vec<u8>> = files_under(&dir.path().join("spec")).iter().map(|f| std::fs::read(f).unwrap()).collect();
    let chunks = dir.path().join("pre/chunks.csv");
    ok(&["spectrogram", "--dataset", "B", "--manifest", s(&chunks), "--out", s(&dir.path().join("spec"))]);
    let second: Vec<Vec<u8>> =
        files_under(&dir.path().join("spec")).iter().map(|f| std::fs::read(f).unwrap()).collect();
    assert_eq!(first, second);
    assert!(images.exists());
}

#[test]
fn train_evaluate_predict_round() {
    let dir = tempfile::tempdir().unwrap();
    let images = front_half(dir.path(), "A", "4");
    let run = dir.path().join("run");
    ok(&["train", "--manifest", s(&images), "--out", s(&run), "--set", "epochs=1"]);
    for f in ["model.ckpt", "history.jsonl", "metrics.json", "split.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ckpt = run.join("model.ckpt");
    let eval_dir = dir.path().join("eval");
    let out = ok(&["evaluate", "--manifest", s(&images), "--checkpoint", s(&ckpt), "--out", s(&eval_dir)]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["n_samples"], 16);

    let short = dir.path().join("short.wav");
    write_wav(&AudioClip::new(vec![0.0; 44100 * 2], 44100).unwrap(), &short).unwrap();
    let out = ok(&["predict", "--checkpoint", s(&ckpt), s(&dir.path().join("raw")), s(&short)]);
    let preds: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(preds.len(), 17);
    for p in &preds[..16] {
        assert_eq!(p["status"], "ok");
        let total: f64 = p["probabilities"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }
    assert_eq!(preds[16]["status"], "too short");
    assert!(preds[16]["predicted"].is_null());
}

#[test]
fn bad_config_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("never");
    let out = auscult(&["synth", "--out", s(&out_dir), "--set", "dropout=1.5"]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dropout"));
    assert!(!out_dir.exists());

    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "dataset = A\nfreq_mask_f = 200\n").unwrap();
    let out = auscult(&["preprocess", "--config", s(&cfg), "--manifest", "x.csv", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("freq_mask_f"));
    assert!(!out_dir.exists());

    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/dataset_a.conf");
    let out =
        auscult(&["train", "--dataset", "B", "--config", s(&shipped), "--manifest", "x.csv", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn shipped_configs_load() {
    for (file, dataset) in [("dataset_a.conf", "A"), ("dataset_b.conf", "B")] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(file);
        let cfg = auscult_cli::PipelineConfig::load(&path, auscult_core::DatasetId::A).unwrap();
        assert_eq!(cfg.dataset.to_string(), dataset);
        assert_eq!(cfg, auscult_cli::PipelineConfig::defaults(cfg.dataset), "{file} drifted from the defaults");
    }
}

#[test]
fn input_and_checkpoint_failures_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = auscult(&["preprocess", "--manifest", s(&dir.path().join("missing.csv")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(EXIT_INPUT));

    let bogus = dir.path().join("bogus.ckpt");
    std::fs::write(&bogus, b"not a checkpoint").unwrap();
    let out = auscult(&["predict", "--checkpoint", s(&bogus), s(dir.path())]);
    assert_eq!(out.status.code(), Some(EXIT_CHECKPOINT));

    let raw = dir.path().join("raw");
    std::fs::create_dir_all(&raw).unwrap();
    std::fs::write(raw.join("broken.wav"), b"RIFF....WAVEjunk").unwrap();
    std::fs::write(raw.join("manifest.csv"), "path,label,dataset\nbroken.wav,normal,A\n").unwrap();
    let out = auscult(&["preprocess", "--manifest", s(&raw.join("manifest.csv")), "--out", s(&dir.path().join("pre"))]);
    assert_eq!(out.status.code(), Some(EXIT_INPUT));
    assert!(String::from_utf8_lossy(&out.stderr).contains("all 1 input files failed"));
}
