use lfi_har::activity::{Activity, CHANNELS, IMU_RATE, LFI_RATE};
use lfi_har::app::default_config;
use lfi_har::config::Config;
use lfi_har::synth::*;
use lfi_har::Exec;

fn profiles() -> ProfileSet {
    ProfileSet::from_config(&default_config()).unwrap()
}

fn short_spec(seed: u64) -> ParticipantSpec {
    let mut cohort = CohortConfig::from_config(&default_config()).unwrap();
    cohort.participants = 1;
    cohort.min_duration = 70.0;
    cohort.duration_scale = 0.0;
    let mut spec = cohort.participants(seed).remove(0);
    spec.durations = [70.0; 7];
    spec
}

#[test]
fn default_profiles_satisfy_invariants() {
    let p = profiles();
    for a in Activity::ALL {
        p.get(a).validate().unwrap();
    }
    assert!(p.get(Activity::Read).eye.reading_pattern);
    let stationary = [Activity::Talk, Activity::Read, Activity::Video, Activity::Type, Activity::Solve]
        .map(|a| p.get(a).imu.motion_power())
        .into_iter()
        .fold(0.0, f64::max);
    for a in [Activity::Walk, Activity::Cycle] {
        assert!(p.get(a).imu.motion_power() >= 10.0 * stationary, "{a}");
    }
}

#[test]
fn participant_stream_layout() {
    let spec = short_spec(3);
    let s = gen_participant(&spec, &profiles());
    let names: Vec<&str> = s.channels.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, CHANNELS);
    let d = s.duration();
    for c in &s.channels {
        let rate = if c.name.starts_with('v') || c.name.starts_with('d') { LFI_RATE } else { IMU_RATE };
        assert_eq!(c.rate, rate, "{}", c.name);
        assert!((c.data.len() as f64 / c.rate - d).abs() < 1e-9, "{}", c.name);
        assert!(c.data.iter().all(|x| x.is_finite()));
    }
    // every activity appears for its full duration, the rest is transition
    for a in Activity::ALL {
        let n = s.labels.iter().filter(|&&l| l == Some(a)).count() as f64 / s.label_rate;
        assert!((n - 70.0).abs() < 1e-6, "{a}: {n}");
    }
    let gaps = s.labels.iter().filter(|l| l.is_none()).count() as f64 / s.label_rate;
    assert!((2.0 * 6.0..=10.0 * 6.0 + 1e-9).contains(&gaps), "{gaps}");
}

#[test]
fn same_seed_same_stream() {
    let p = profiles();
    let a = gen_participant(&short_spec(9), &p);
    let b = gen_participant(&short_spec(9), &p);
    let c = gen_participant(&short_spec(10), &p);
    assert_eq!(a.channels, b.channels);
    assert_eq!(a.labels, b.labels);
    assert_ne!(a.channels[0].data, c.channels[0].data);
}

#[test]
fn cohort_order_and_modes() {
    let mut cohort = CohortConfig::default();
    cohort.participants = 3;
    let specs: Vec<ParticipantSpec> = cohort
        .participants(5)
        .into_iter()
        .map(|mut s| {
            s.durations = [70.0; 7];
            s
        })
        .collect();
    let p = profiles();
    let seq = gen_cohort(&specs, &p, Exec::Sequential);
    let par = gen_cohort(&specs, &p, Exec::Parallel);
    assert_eq!(seq.len(), 3);
    for (a, b) in seq.iter().zip(&par) {
        assert_eq!(a.participant_id, b.participant_id);
        assert_eq!(a.channels, b.channels);
    }
    assert_eq!(seq[0].participant_id, "P01");
}

#[test]
fn default_cohort_meets_duration_floor_and_gain_range() {
    let cohort = CohortConfig::from_config(&default_config()).unwrap();
    let specs = cohort.participants(1);
    assert_eq!(specs.len(), 8);
    for s in &specs {
        s.validate(30.0).unwrap();
        assert!(s.durations.iter().all(|&d| d >= 300.0));
        assert!(s.personal_scale.gain.iter().all(|g| (0.5..=2.0).contains(g)));
        let g = s.eye_geometry;
        assert!(g.lid < g.iris && g.iris < g.retina);
    }
    let intensities: Vec<f64> = specs.iter().map(|s| s.personal_scale.intensity).collect();
    assert_eq!(intensities[6], 1.7);
    assert!((intensities[7] - 1.0 / 1.7).abs() < 1e-12);
}

#[test]
fn missing_profile_names_the_activity() {
    let cfg = default_config();
    let mut text = cfg.canonical_text();
    text = text.lines().filter(|l| !l.starts_with("profile.cycle.")).collect::<Vec<_>>().join("\n");
    let err = ProfileSet::from_config(&Config::parse(&text, "t").unwrap()).unwrap_err();
    assert!(err.to_string().contains("cycle"), "{err}");
}

#[test]
fn eye_distances_visit_all_three_surfaces() {
    let p = profiles();
    let geom = EyeGeometry { iris: 25e-3, retina: 49e-3, lid: 20.5e-3 };
    let t = gen_eye_trajectory(p.get(Activity::Talk), 120.0, &geom, 4);
    assert_eq!(t.d1.len(), 120_000);
    let share = |g: f64| t.d1.iter().filter(|&&d| (d - g).abs() < 1e-12).count() as f64 / t.d1.len() as f64;
    let (iris, retina, lid) = (share(geom.iris), share(geom.retina), share(geom.lid));
    assert!((iris + retina + lid - 1.0).abs() < 1e-12);
    // mostly iris, with pupil crossings and a few blinks
    assert!(iris > 0.5 && retina > 0.0 && lid > 0.0, "{iris} {retina} {lid}");
}
