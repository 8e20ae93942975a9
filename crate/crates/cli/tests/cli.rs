use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dceeg_cli::RunConfigFile;
use dceeg_signal::EpochDataset;

fn smoke_config() -> RunConfigFile {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    RunConfigFile::load(&path).unwrap()
}

fn write_config(dir: &Path, cfg: &RunConfigFile) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, cfg.to_toml()).unwrap();
    p
}

fn dceeg(config: Option<&Path>, out: &Path, args: &[&str]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dceeg"));
    if let Some(cfg) = config {
        c.arg("--config").arg(cfg);
    }
    c.arg("--out-dir").arg(out).args(args).output().unwrap()
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

/// Synthesize and preprocess into `dir`; returns the dataset path.
fn dataset(dir: &Path, cfg: &Path) -> PathBuf {
    ok(&dceeg(Some(cfg), dir, &["synth"]));
    let raw = dir.join("raw");
    ok(&dceeg(
        Some(cfg),
        dir,
        &["preprocess", "--raw", raw.to_str().unwrap()],
    ));
    dir.join("dataset.epochs")
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dceeg(None, dir.path(), &[]).status.code(), Some(2));
    assert_eq!(dceeg(None, dir.path(), &["bogus"]).status.code(), Some(2));
    assert_eq!(
        dceeg(None, dir.path(), &["--threads", "0", "report"])
            .status
            .code(),
        Some(2)
    );

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n[train]\nlearning_rate = 0.1\n").unwrap();
    let o = dceeg(Some(&bad), dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["exit_code"], 2);
    assert!(err["message"].as_str().unwrap().contains("learning_rate"));

    let o = dceeg(
        None,
        dir.path(),
        &["train", "--data", "/nonexistent/dataset.epochs"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.epochs");
    std::fs::write(&garbage, "not a dataset\n").unwrap();
    let o = dceeg(
        None,
        dir.path(),
        &["train", "--data", garbage.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn synth_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &smoke_config());
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&dceeg(Some(&cfg), &out, &["--seed", seed, "synth"]));
        std::fs::read(out.join("raw/synth-003.raw")).unwrap()
    };
    let a = run("a", "11");
    assert_eq!(a, run("b", "11"));
    assert_ne!(a, run("c", "12"));
    let n = std::fs::read_dir(dir.path().join("a/raw")).unwrap().count();
    assert_eq!(n, 2 * smoke_config().synth.num_recordings);
}

#[test]
fn preprocess_header_and_provenance_agree_with_payload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &smoke_config());
    let data = dataset(dir.path(), &cfg);
    let ds = EpochDataset::load(&data).unwrap();
    assert!(std::fs::read(&data).unwrap().starts_with(b"DCEEG-EPOCHS 1"));
    let prov: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("provenance.json")).unwrap())
            .unwrap();
    for (class, n) in ds.classes.iter().zip(ds.class_counts()) {
        assert_eq!(prov["class_counts"][class], n as u64);
    }
    assert_eq!(ds.labels().len(), ds.len());
    assert_eq!(
        prov["inputs"].as_array().unwrap().len(),
        2 * smoke_config().synth.num_recordings
    );
    assert!(dir.path().join("resolved_config.toml").exists());
}

#[test]
fn wider_seizure_overlap_yields_more_seizure_epochs() {
    let count = |overlap: f64| {
        let dir = tempfile::tempdir().unwrap();
        let mut c = smoke_config();
        c.preprocess.segmentation.seizure_overlap = overlap;
        let cfg = write_config(dir.path(), &c);
        let ds = EpochDataset::load(&dataset(dir.path(), &cfg)).unwrap();
        let sz = ds.classes.iter().position(|c| c == "SZ").unwrap();
        ds.class_counts()[sz]
    };
    assert!(count(0.75) > count(0.5));
}

#[test]
fn train_distill_eval_ecam_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = smoke_config();
    c.train.epochs = 8;
    c.distill.epochs = 4;
    let cfg = write_config(dir.path(), &c);
    let data = dataset(dir.path(), &cfg);
    let d = data.to_str().unwrap();
    let out = |n: &str| dir.path().join(n);

    ok(&dceeg(Some(&cfg), dir.path(), &["train", "--data", d]));
    assert_eq!(lines(&out("teacher_curve.ndjson")).len(), 8);
    let teacher = out("teacher.ckpt");
    ok(&dceeg(
        Some(&cfg),
        dir.path(),
        &[
            "distill",
            "--teacher",
            teacher.to_str().unwrap(),
            "--data",
            d,
        ],
    ));
    assert_eq!(lines(&out("student_curve.ndjson")).len(), 4);
    let report = lines(&out("distill_report.csv"));
    assert_eq!(report.len(), 3);
    assert!(report[1].starts_with("teacher,") && report[2].starts_with("student,"));

    let student = out("student.ckpt");
    for ck in [&teacher, &student] {
        let stdout = ok(&dceeg(
            Some(&cfg),
            dir.path(),
            &["eval", "--checkpoint", ck.to_str().unwrap(), "--data", d],
        ));
        assert!(stdout.contains("accuracy"));
        let m = lines(&out("metrics.csv"));
        assert_eq!(m[0], "class,acc,pre,rec,spec,f1,auc,support");
        assert_eq!(m.len(), 1 + 2 + 2);
        assert!(m[3].starts_with("overall,"));
        assert_eq!(lines(&out("confusion.csv")).len(), 3);
        assert!(lines(&out("roc.csv")).len() > 2);
    }
    assert!(out("zero_shot_metrics.csv").exists());

    ok(&dceeg(
        Some(&cfg),
        dir.path(),
        &[
            "ecam",
            "--checkpoint",
            student.to_str().unwrap(),
            "--data",
            d,
        ],
    ));
    let ds = EpochDataset::load(&data).unwrap();
    assert_eq!(
        lines(&out("channel_scores.csv")).len(),
        1 + ds.len() * ds.channels.len()
    );
    assert_eq!(
        lines(&out("channel_summary.csv")).len(),
        1 + 2 * ds.channels.len()
    );
}

#[test]
fn f32_precision_trains() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = smoke_config();
    c.train.epochs = 2;
    let cfg = write_config(dir.path(), &c);
    let data = dataset(dir.path(), &cfg);
    ok(&dceeg(
        Some(&cfg),
        dir.path(),
        &[
            "--precision",
            "f32",
            "train",
            "--data",
            data.to_str().unwrap(),
        ],
    ));
    let inv: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("invocation.json")).unwrap())
            .unwrap();
    assert_eq!(inv["precision"], "f32");
}

#[test]
fn eval_rejects_a_dataset_with_other_classes() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = smoke_config();
    c.train.epochs = 1;
    let cfg = write_config(dir.path(), &c);
    let data = dataset(dir.path(), &cfg);
    ok(&dceeg(
        Some(&cfg),
        dir.path(),
        &["train", "--data", data.to_str().unwrap()],
    ));

    let other = tempfile::tempdir().unwrap();
    let mut c2 = smoke_config();
    c2.synth.classes[0].label = "GNSZ".into();
    let cfg2 = write_config(other.path(), &c2);
    let data2 = dataset(other.path(), &cfg2);
    let o = dceeg(
        Some(&cfg),
        dir.path(),
        &[
            "eval",
            "--checkpoint",
            dir.path().join("teacher.ckpt").to_str().unwrap(),
            "--data",
            data2.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_prints_preset_ratio_and_ablation_grid() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&dceeg(None, dir.path(), &["report"]));
    let line = stdout
        .lines()
        .find(|l| l.starts_with("paper_student vs paper_teacher"))
        .unwrap();
    let ratio: f64 = line
        .split("parameter ratio ")
        .nth(1)
        .unwrap()
        .split(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.50..=0.65).contains(&ratio));
    let flops = lines(&dir.path().join("flops.csv"));
    assert!(flops.iter().any(|l| l.starts_with("paper_student,")));

    let cfg = write_config(dir.path(), &smoke_config());
    let data = dataset(dir.path(), &cfg);
    ok(&dceeg(
        Some(&cfg),
        dir.path(),
        &["report", "--data", data.to_str().unwrap()],
    ));
    let rows = lines(&dir.path().join("ablation.csv"));
    let labels: Vec<&str> = rows[1..]
        .iter()
        .map(|r| r.split(',').next().unwrap())
        .collect();
    assert_eq!(
        labels,
        ["EEG-LP", "Text-WP", "Text-LP", "Text-HP", "Base-WP", "Base-LP"]
    );
}
