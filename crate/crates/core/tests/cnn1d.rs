use lfi_har::activity::Activity;
use lfi_har::cnn::{self, gradcheck, Batch, CnnConfig, CnnError, CnnModel, Mode, TrainConfig};
use lfi_har::dataset::LabeledWindow;
use lfi_har::Exec;

/// Two windows per class; each class is a tone of its own frequency.
fn separable(len: usize, channels: usize) -> Vec<LabeledWindow> {
    let mut out = Vec::new();
    for (k, a) in Activity::ALL.into_iter().enumerate() {
        for copy in 0..2 {
            let f = 0.002 * (k + 1) as f32;
            let data: Vec<f32> = (0..len * channels)
                .map(|i| {
                    let (t, c) = (i / channels, i % channels);
                    (std::f32::consts::TAU * f * t as f32 + c as f32 + copy as f32 * 0.3).sin()
                })
                .collect();
            out.push(LabeledWindow {
                data: data.into(),
                len,
                channels,
                label: a,
                participant_id: "p".into(),
                window_index: out.len(),
            });
        }
    }
    out
}

fn tiny(len: usize, channels: usize) -> CnnConfig {
    let mut c = CnnConfig::standard(channels, 7);
    c.input_length = len;
    for b in &mut c.blocks {
        b.out_channels = 4;
        b.pool = 2;
    }
    c.fc1 = 16;
    c
}

fn accuracy(model: &CnnModel<f32>, ws: &[LabeledWindow]) -> f64 {
    let pred = cnn::predict(model, ws, Exec::Parallel).unwrap();
    pred.iter().zip(ws).filter(|(p, w)| **p == w.label.index()).count() as f64 / ws.len() as f64
}

#[test]
fn parameter_count_matches_closed_form() {
    let c = CnnConfig::standard(10, 7);
    assert_eq!(c.lengths(), [3600, 720, 144, 28, 5]);
    let widths = [10, 32, 64, 128, 128];
    let conv: usize = (0..4).map(|i| widths[i] * widths[i + 1] * 5 + widths[i + 1] + 2 * widths[i + 1]).sum();
    let fc = 128 * 5 * 1024 + 1024 + 1024 * 7 + 7;
    assert_eq!(c.param_count(), conv + fc);
    assert_eq!(CnnModel::<f32>::new(c, 0).unwrap().param_count(), conv + fc);
    // first conv alone: in*out*k + out
    assert_eq!(10 * 32 * 5 + 32, 1632);
}

#[test]
fn gradient_check_on_random_tiny_configs() {
    for seed in 0..25 {
        let g = gradcheck::check(gradcheck::random_tiny_config(seed), 3, seed);
        assert!(g.checked > 0);
        assert!(g.max_rel_error < 1e-4, "config {seed}: {g:?}");
    }
}

#[test]
fn default_architecture_overfits_fourteen_windows() {
    let ws = separable(3600, 10);
    let mut model = CnnModel::<f32>::new(CnnConfig::standard(10, 7), 3).unwrap();
    let tc = TrainConfig {
        epochs: 200,
        batch_size: 14,
        seed: 1,
        ..TrainConfig::default()
    };
    let report = cnn::train(&mut model, &ws, &tc, Exec::Parallel).unwrap();
    assert_eq!(report.epoch_loss.len(), 200);
    assert!(report.epoch_loss[199] < report.epoch_loss[0]);
    assert_eq!(accuracy(&model, &ws), 1.0);
}

#[test]
fn zero_learning_rate_changes_only_running_stats() {
    let ws = separable(50, 3);
    let mut model = CnnModel::<f32>::new(tiny(50, 3), 4).unwrap();
    let before = model.clone();
    let tc = TrainConfig {
        learning_rate: 0.0,
        epochs: 2,
        batch_size: 5,
        seed: 2,
        ..TrainConfig::default()
    };
    cnn::train(&mut model, &ws, &tc, Exec::Sequential).unwrap();
    assert_eq!(model.params, before.params);
    assert_ne!(model.running_mean, before.running_mean);
}

#[test]
fn training_is_deterministic_across_modes() {
    let ws = separable(50, 3);
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = |exec| {
        let mut m = CnnModel::<f32>::new(tiny(50, 3), 5).unwrap();
        let r = cnn::train(&mut m, &ws, &tc, exec).unwrap();
        (m, r)
    };
    let (a, ra) = run(Exec::Sequential);
    let (b, rb) = run(Exec::Parallel);
    let (c, _) = run(Exec::Sequential);
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert_eq!(a, c);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ws = separable(50, 3);
    let mut model = CnnModel::<f32>::new(tiny(50, 3), 6).unwrap();
    let tc = TrainConfig { epochs: 2, batch_size: 7, seed: 3, ..TrainConfig::default() };
    cnn::train(&mut model, &ws, &tc, Exec::Sequential).unwrap();
    let mut buf = Vec::new();
    model.save(&mut buf).unwrap();
    let back = CnnModel::<f32>::load(buf.as_slice()).unwrap();
    assert_eq!(back, model);
    let p1 = cnn::probabilities(&model, &ws, Exec::Sequential).unwrap();
    let p2 = cnn::probabilities(&back, &ws, Exec::Sequential).unwrap();
    assert_eq!(p1.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), p2.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    // f64 model refuses to load an f32 checkpoint, truncation is detected
    assert!(CnnModel::<f64>::load(buf.as_slice()).is_err());
    assert!(CnnModel::<f32>::load(&buf[..buf.len() - 3]).is_err());
}

#[test]
fn eval_forward_is_pure_and_rows_are_distributions() {
    let ws = separable(50, 3);
    let model = CnnModel::<f32>::new(tiny(50, 3), 7).unwrap();
    let refs: Vec<&LabeledWindow> = ws.iter().collect();
    let x = Batch::from_windows(&refs);
    let snapshot = model.clone();
    let (p, _) = model.forward(&x, Mode::Eval, 0, Exec::Sequential).unwrap();
    let (q, _) = model.forward(&x, Mode::Eval, 0, Exec::Parallel).unwrap();
    assert_eq!(p, q);
    assert_eq!(model, snapshot);
    for row in p.chunks(7) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
}

#[test]
fn shape_mismatch_and_empty_set_are_errors() {
    let ws = separable(50, 3);
    let mut model = CnnModel::<f32>::new(tiny(60, 3), 1).unwrap();
    let tc = TrainConfig::default();
    assert!(matches!(cnn::train(&mut model, &ws, &tc, Exec::Sequential), Err(CnnError::ShapeMismatch(_))));
    assert!(matches!(cnn::train(&mut model, &[], &tc, Exec::Sequential), Err(CnnError::EmptyTrainSet)));
}
