//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. The LOPOCV experiment dominates the runtime.

use std::path::Path;
use std::time::{Duration, Instant};

use lfi_har::activity::{Activity, IMU_CHANNELS, LFI_CHANNELS};
use lfi_har::app::{self, RunOptions, Settings, Task};
use lfi_har::cnn::{self, gradcheck, CnnConfig, CnnModel, TrainConfig};
use lfi_har::dataset::{self, HarDataset, LabeledWindow, Provenance};
use lfi_har::eval::{self, AblationSpec, ModelKind};
use lfi_har::lfi::{self, LaserParams, MotionSample, RampConfig, RampFrequencies};
use lfi_har::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn dsp_roundtrip() -> Outcome {
    let t = Instant::now();
    let (laser, ramp) = (LaserParams::default(), RampConfig::default());
    let mut r = ChaCha8Rng::seed_from_u64(SEED);
    let samples: Vec<MotionSample> = (0..200)
        .map(|_| MotionSample::new(r.random_range(15e-3..=35e-3), r.random_range(-0.05..=0.05)))
        .collect();
    let measured = match lfi::roundtrip_batch(&samples, &laser, &ramp, Exec::default()) {
        Ok(m) => m,
        Err(e) => return outcome(false, format!("extraction failed: {e}")),
    };
    let (mut worst_d, mut worst_v, mut bad) = (0.0f64, 0.0f64, 0);
    for (s, m) in samples.iter().zip(&measured) {
        let (ed, ev) = ((m.distance - s.distance).abs(), (m.velocity - s.velocity).abs());
        worst_d = worst_d.max(ed);
        worst_v = worst_v.max(ev);
        if ed >= 0.1e-3 || ev >= (0.01 * s.velocity.abs()).max(1e-3) {
            bad += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        bad == 0 && secs < 10.0,
        format!("200 samples, {bad} outside tolerance, max |dd| {worst_d:.2e} m, max |dv| {worst_v:.2e} m/s, {secs:.2} s"),
    )
}

fn frequency_algebra() -> Outcome {
    let (laser, ramp) = (LaserParams::default(), RampConfig::default());
    let mut r = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut ok = true;
    for _ in 0..1000 {
        let (up, down) = (r.random_range(0.0..1e6f64), r.random_range(0.0..1e6f64));
        let bd = lfi::combine_freqs(&RampFrequencies { f_up: up, f_down: down });
        ok &= bd.f0 == (up + down) / 2.0 && bd.fd == (up - down) / 2.0;
        // reconstruction is exact up to one rounding of the sum
        let back = bd.ramp_frequencies();
        ok &= (back.f_up - up).abs() <= f64::EPSILON * 2e6 && (back.f_down - down).abs() <= f64::EPSILON * 2e6;
    }
    let examples = [
        ((120e3, 100e3), (110e3, 10e3)),
        ((100e3, 120e3), (110e3, -10e3)),
        ((90e3, 90e3), (90e3, 0.0)),
    ];
    for ((up, down), (f0, fd)) in examples {
        let bd = lfi::combine_freqs(&RampFrequencies { f_up: up, f_down: down });
        ok &= bd.f0 == f0 && bd.fd == fd;
    }
    let mut linear = true;
    for k in [0.0, 0.5, 2.0, 3.7] {
        let f = 123_456.0;
        let d = lfi::freq_to_distance(f, &laser, &ramp).unwrap();
        let dk = lfi::freq_to_distance(k * f, &laser, &ramp).unwrap();
        let v = lfi::freq_to_velocity(f, &laser).unwrap();
        let vk = lfi::freq_to_velocity(-k * f, &laser).unwrap();
        linear &= (dk - k * d).abs() <= 1e-12 * d && (vk + k * v).abs() <= 1e-12 * v;
    }
    outcome(ok && linear, format!("combine identities exact: {ok}, f0/fd linearity: {linear}"))
}

fn gradient_check() -> Outcome {
    let t = Instant::now();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for seed in 0..25 {
        let g = gradcheck::check(gradcheck::random_tiny_config(seed), 3, seed);
        worst = worst.max(g.max_rel_error);
        checked += g.checked;
        skipped += g.skipped;
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 60.0,
        format!("25 configs, {checked} parameters checked, {skipped} skipped at kinks, max rel. error {worst:.2e}, {secs:.2} s"),
    )
}

fn separable_windows() -> Vec<LabeledWindow> {
    let mut out = Vec::new();
    for (k, a) in Activity::ALL.into_iter().enumerate() {
        for copy in 0..2 {
            let f = 0.002 * (k + 1) as f32;
            let data: Vec<f32> = (0..3600 * 10)
                .map(|i| (std::f32::consts::TAU * f * (i / 10) as f32 + (i % 10) as f32 + copy as f32 * 0.3).sin())
                .collect();
            out.push(LabeledWindow {
                data: data.into(),
                len: 3600,
                channels: 10,
                label: a,
                participant_id: "overfit".into(),
                window_index: out.len(),
            });
        }
    }
    out
}

fn overfit() -> Outcome {
    let ws = separable_windows();
    let mut model = CnnModel::<f32>::new(CnnConfig::standard(10, 7), SEED).unwrap();
    let tc = TrainConfig {
        epochs: 200,
        batch_size: 14,
        seed: SEED,
        ..TrainConfig::default()
    };
    if let Err(e) = cnn::train(&mut model, &ws, &tc, Exec::default()) {
        return outcome(false, format!("training failed: {e}"));
    }
    let pred = cnn::predict(&model, &ws, Exec::default()).unwrap();
    let correct = pred.iter().zip(&ws).filter(|(p, w)| **p == w.label.index()).count();
    outcome(correct == 14, format!("{correct}/14 training windows correct after 200 epochs"))
}

fn pipeline_arithmetic() -> Outcome {
    let count = dataset::window_count(36000, 3600, dataset::window_stride(3600, 0.3));
    let s = dataset::SensorStream {
        participant_id: "p".into(),
        channels: vec![dataset::Channel {
            name: "x".into(),
            rate: 1.0,
            data: vec![1.0, 2.0, 3.0],
        }],
        label_rate: 1.0,
        labels: vec![Some(Activity::Talk); 3],
    };
    let z = dataset::standardize(&s).channels[0].data.clone();
    let expected = [-1.2247, 0.0, 1.2247];
    let z_ok = z.iter().zip(expected).all(|(a, b)| (a - b).abs() < 5e-5) && z[1] == 0.0;

    let ws: Vec<LabeledWindow> = [Activity::Talk, Activity::Talk, Activity::Talk, Activity::Read]
        .iter()
        .enumerate()
        .map(|(i, &a)| LabeledWindow {
            data: vec![i as f32].into(),
            len: 1,
            channels: 1,
            label: a,
            participant_id: "p".into(),
            window_index: i,
        })
        .collect();
    let before = ws.clone();
    let b = dataset::balance(&ws, &[Activity::Talk, Activity::Read], SEED).unwrap();
    let counts = dataset::class_counts(&b);
    let balanced = counts[&Activity::Talk] == 3 && counts[&Activity::Read] == 3 && ws == before && b[..4] == ws[..];
    outcome(
        count == 13 && z_ok && balanced,
        format!("window count {count}, standardized {z:.4?}, balanced counts {counts:?}, input untouched {}", ws == before),
    )
}

fn metric_oracle() -> Outcome {
    let m = eval::Metrics::from_confusion(vec![vec![8, 2], vec![3, 7]]);
    let p = eval::compute_metrics(&[0, 1, 2, 3, 4, 5, 6, 0], &[0, 1, 2, 3, 4, 5, 6, 0], 7).unwrap();
    outcome(
        (m.macro_f1 - 0.7494).abs() <= 1e-4 && p.macro_f1 == 1.0 && p.accuracy == 1.0,
        format!("macro F1 {:.6} (class F1 {:.4}, {:.4}), perfect {}", m.macro_f1, m.per_class_f1[0], m.per_class_f1[1], p.macro_f1),
    )
}

struct Experiment {
    ds: HarDataset,
    settings: Settings,
    intensity: Vec<(String, f64)>,
    elapsed: Duration,
    comparison: eval::Comparison,
}

fn cohort(dir: &Path) -> (HarDataset, Settings, Vec<(String, f64)>) {
    let cfg = app::default_config();
    app::synth(&cfg, dir, SEED, Exec::default()).unwrap();
    let (loaded, stored) = app::open_dataset(dir).unwrap();
    let settings = Settings::from_config(&stored).unwrap();
    let streams = loaded.read_streams(Exec::default()).unwrap();
    let ds = HarDataset::from_streams(
        &streams,
        &settings.window,
        Provenance {
            seed: SEED,
            config_hash: stored.hash(),
        },
        Exec::default(),
    );
    let intensity = loaded.manifest.participants.iter().map(|p| (p.participant_id.clone(), p.intensity)).collect();
    (ds, settings, intensity)
}

fn lopocv(exp: &Experiment) -> Outcome {
    let c = &exp.comparison;
    let (cnn, rfc) = (c.cnn.mean_macro_f1(), c.rfc.mean_macro_f1());
    let transfer = c.transfer.as_ref().unwrap();
    let mut shifted = Vec::new();
    let mut other = Vec::new();
    for (id, k) in &exp.intensity {
        let f = transfer.fold(id).unwrap();
        let plain = f.baseline.as_ref().unwrap().macro_f1;
        let line = format!("{id} (intensity {k:.3}) transfer {:.4} vs plain {plain:.4}", f.metrics.macro_f1);
        if *k >= 1.5 {
            shifted.push((f.metrics.macro_f1 >= plain, line));
        } else if *k != 1.0 && (*k <= 1.0 / 1.5) {
            other.push(line);
        }
    }
    let a = cnn >= 0.85;
    let b = cnn >= rfc;
    let c7 = !shifted.is_empty() && shifted.iter().all(|(ok, _)| *ok);
    let minutes = exp.elapsed.as_secs_f64() / 60.0;
    let shifted_txt: Vec<&str> = shifted.iter().map(|(_, l)| l.as_str()).collect();
    outcome(
        a && b && c7 && minutes <= 30.0,
        format!(
            "(a) CNN {cnn:.4} >= 0.85: {a}; (b) RFC {rfc:.4} <= CNN: {b}; (c) shift >= 1.5: {} -> {c7}; transfer mean {:.4}; [info: down-shifted {}]; {minutes:.1} min",
            shifted_txt.join(", "),
            transfer.mean_macro_f1(),
            if other.is_empty() { "none".to_string() } else { other.join(", ") },
        ),
    )
}

fn ablation(exp: &Experiment) -> Outcome {
    let specs = [AblationSpec::new("imu", &IMU_CHANNELS), AblationSpec::new("lfi", &LFI_CHANNELS)];
    let t = Instant::now();
    let table = match eval::run_ablation(&exp.ds, &specs, ModelKind::Cnn, &exp.settings.eval, SEED, 1, Exec::default()) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("ablation failed: {e}")),
    };
    let f = |name, a| table.f1(name, a).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for a in [Activity::Walk, Activity::Cycle] {
        ok &= f("imu", a) > f("lfi", a);
        parts.push(format!("{a} IMU {:.3} vs LFI {:.3}", f("imu", a), f("lfi", a)));
    }
    ok &= f("lfi", Activity::Read) > f("imu", Activity::Read);
    parts.push(format!("read LFI {:.3} vs IMU {:.3}", f("lfi", Activity::Read), f("imu", Activity::Read)));
    parts.push(format!("{:.1} min", t.elapsed().as_secs_f64() / 60.0));
    outcome(ok, parts.join("; "))
}

/// Every command twice on a small cohort, reports compared byte for byte,
/// with different fold concurrency on the second pass.
fn determinism(root: &Path) -> Outcome {
    let small = [
        "cohort.participants=3",
        "cohort.duration_scale=0",
        "cohort.min_duration=70",
        "cohort.shifted=1",
        "cnn.channels=4,4,4,4",
        "cnn.fc1=16",
        "cnn.epochs=1",
        "rfc.trees=10",
        "transfer.epochs=2",
        "transfer.shots=1",
    ];
    let sets: Vec<String> = small.iter().map(|s| s.to_string()).collect();
    let mut texts: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for (pass, jobs) in [(0, 1), (1, 3)] {
        let dir = root.join(format!("pass{pass}"));
        let cfg = app::layered_config(None, &sets).unwrap();
        app::synth(&cfg, &dir.join("data"), SEED, Exec::default()).unwrap();
        let mut files = vec![("manifest.txt".to_string(), std::fs::read(dir.join("data/manifest.txt")).unwrap())];
        for task in [Task::Rfc, Task::Cnn, Task::Transfer, Task::Ablate, Task::DspDemo] {
            let out = app::run(&RunOptions {
                dataset: dir.join("data"),
                task,
                config: None,
                sets: vec![],
                seed: None,
                out: dir.join("reports"),
                jobs,
            })
            .unwrap();
            files.push((format!("{task} stdout"), out.stdout.into_bytes()));
            for f in out.files {
                files.push((f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap()));
            }
        }
        texts.push(files);
    }
    let same = texts[0] == texts[1];
    let differing: Vec<&str> = texts[0]
        .iter()
        .zip(&texts[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    outcome(
        same,
        format!("{} artifacts over synth + 5 tasks, jobs 1 vs 3, differing: {:?}", texts[0].len(), differing),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n, name, o: Outcome| {
        println!("criterion {n} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "DSP round trip", dsp_roundtrip());
    report(2, "frequency algebra", frequency_algebra());
    report(3, "gradient check", gradient_check());
    report(4, "overfit oracle", overfit());
    report(5, "pipeline arithmetic", pipeline_arithmetic());
    report(6, "metric oracle", metric_oracle());

    let tmp = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let (ds, settings, intensity) = cohort(&tmp.path().join("cohort"));
    let comparison = eval::run_comparison(&ds, &settings.eval, SEED, 1, Exec::default()).unwrap();
    let exp = Experiment {
        ds,
        settings,
        intensity,
        elapsed: t.elapsed(),
        comparison,
    };
    report(7, "scaled LOPOCV experiment", lopocv(&exp));
    report(8, "ablation ordering", ablation(&exp));
    report(9, "determinism", determinism(&tmp.path().join("determinism")));

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all 9 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
