use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "cohort.participants=3",
    "cohort.duration_scale=0",
    "cohort.min_duration=70",
    "cohort.shifted=1",
    "cnn.channels=4,4,4,4",
    "cnn.fc1=16",
    "cnn.epochs=1",
    "rfc.trees=10",
    "transfer.epochs=1",
    "transfer.shots=1",
];

fn lfi_har(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfi-har")).args(args).output().unwrap()
}

fn synth(out: &Path, seed: u64) -> Output {
    let (out, seed) = (out.to_str().unwrap().to_string(), seed.to_string());
    let mut args = vec!["synth", "--seed", &seed, "--out", &out];
    for s in TINY {
        args.extend(["--set", s]);
    }
    lfi_har(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn last_line(o: &Output) -> String {
    stdout(o).lines().last().unwrap_or_default().to_string()
}

#[test]
fn synth_writes_a_reproducible_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = synth(&a, 11);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(synth(&b, 11).status.success());
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    for p in ["P01", "P02", "P03"] {
        assert!(manifest.contains(&format!("{p}.csv")), "{manifest}");
        assert!(a.join(format!("{p}.csv")).exists());
    }
    assert_eq!(manifest, std::fs::read_to_string(b.join("manifest.txt")).unwrap());
    assert_eq!(std::fs::read(a.join("P02.csv")).unwrap(), std::fs::read(b.join("P02.csv")).unwrap());
}

#[test]
fn missing_profile_is_a_config_error_naming_the_activity() {
    let dir = tempfile::tempdir().unwrap();
    let text: String = lfi_har::app::DEFAULT_CONFIG
        .lines()
        .filter(|l| !l.starts_with("profile.cycle."))
        .map(|l| format!("{l}\n"))
        .collect();
    let cfg = dir.path().join("no_cycle.conf");
    std::fs::write(&cfg, text).unwrap();
    let o = lfi_har(&["synth", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("d").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cycle"), "{}", stderr(&o));
}

#[test]
fn unknown_task_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = lfi_har(&["run", "svm", "--dataset", ".", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("svm") && err.contains("Usage"), "{err}");
    assert!(err.contains("dsp-demo"), "{err}");
}

#[test]
fn bad_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lfi_har(&["synth", "--out", dir.path().to_str().unwrap(), "--set", "window.rate=100"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn tampered_dataset_exits_with_integrity_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, 3).status.success());
    let csv = data.join("P01.csv");
    let mut text = std::fs::read_to_string(&csv).unwrap();
    let at = text.len() / 2;
    text.insert(at, '9');
    std::fs::write(&csv, text).unwrap();
    let o = lfi_har(&["run", "rfc", "--dataset", data.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("P01.csv"), "{}", stderr(&o));
}

#[test]
fn rfc_run_ends_with_macro_f1_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (data, reports) = (dir.path().join("data"), dir.path().join("r"));
    assert!(synth(&data, 5).status.success());
    let o = lfi_har(&["run", "rfc", "--dataset", data.to_str().unwrap(), "--out", reports.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let last = last_line(&o);
    let f1: f64 = last.strip_prefix("macro_f1=").expect(&last).parse().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert_eq!(last.len(), "macro_f1=".len() + 8);
    let folds = std::fs::read_to_string(reports.join("rfc_folds.csv")).unwrap();
    assert!(folds.lines().next().unwrap().starts_with('#'));
    assert_eq!(folds.lines().filter(|l| l.contains(",P0")).count(), 3);
}

#[test]
fn cnn_run_with_overrides_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, 5).status.success());
    let run = |out: &str, jobs: &str| {
        let o = lfi_har(&[
            "run",
            "cnn",
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            dir.path().join(out).to_str().unwrap(),
            "--jobs",
            jobs,
            "--set",
            "cnn.batch_size=8",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (stdout(&o), std::fs::read(dir.path().join(out).join("cnn_folds.csv")).unwrap())
    };
    let a = run("a", "1");
    assert!(a.0.lines().last().unwrap().starts_with("macro_f1="));
    assert_eq!(a, run("b", "2"));
}

#[test]
fn dsp_demo_needs_no_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let o = lfi_har(&["run", "dsp-demo", "--out", dir.path().to_str().unwrap(), "--set", "dsp.samples=20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let last = last_line(&o);
    assert!(last.starts_with("dsp_roundtrip ") && last.ends_with("failures=0"), "{last}");
    assert!(dir.path().join("dsp_demo_waveform.bin").exists());
}
