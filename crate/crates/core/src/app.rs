//! The `synth` and `run` commands behind the command-line front end.
//!
//! A dataset directory holds one CSV per participant, the canonical
//! configuration it was generated with (`config.conf`) and `manifest.txt`
//! with checksums of both. `run` starts from that stored configuration, so a
//! dataset carries everything needed to reproduce its reports.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;

use crate::activity::{Activity, IMU_RATE, LFI_RATE};
use crate::cnn::{CnnConfig, ConvSpec, TrainConfig};
use crate::config::{Config, ConfigError};
use crate::dataset::{
    file_sha256, resample, write_csv, DatasetError, HarDataset, LoadedManifest, Manifest, ManifestEntry, Provenance as DataProvenance,
    Standardization, WindowConfig, COMMON_RATE,
};
use crate::eval::{self, AblationSpec, EvalConfig, EvalError, EvalReport, ModelKind, Provenance};
use crate::lfi::{self, LaserParams, MotionSample, RampConfig};
use crate::par::Exec;
use crate::rfc::RfcConfig;
use crate::rng;
use crate::synth::{gen_cohort, CohortConfig, ProfileSet, SynthError};

/// Built-in configuration; a `--config` file replaces it wholesale.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.conf");

pub const CONFIG_FILE: &str = "config.conf";
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn default_config() -> Config {
    Config::parse(DEFAULT_CONFIG, "<default config>").expect("built-in config parses")
}

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug)]
pub enum AppError {
    /// Bad configuration or arguments (exit 2).
    Config(String),
    /// Dataset files do not match their manifest (exit 3).
    Integrity(String),
    /// Training produced a non-finite loss (exit 4).
    Divergence(String),
    /// Anything else, I/O included (exit 1).
    Other(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Other(_) => 1,
            AppError::Config(_) => 2,
            AppError::Integrity(_) => 3,
            AppError::Divergence(_) => 4,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "configuration error: {m}"),
            AppError::Integrity(m) => write!(f, "dataset integrity check failed: {m}"),
            AppError::Divergence(m) => write!(f, "training diverged: {m}"),
            AppError::Other(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for AppError {}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<SynthError> for AppError {
    fn from(e: SynthError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<DatasetError> for AppError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Checksum { .. } => AppError::Integrity(e.to_string()),
            DatasetError::Parse { .. } => AppError::Integrity(e.to_string()),
            _ => AppError::Other(e.to_string()),
        }
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        if e.is_divergence() {
            AppError::Divergence(e.to_string())
        } else {
            AppError::Other(e.to_string())
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
    move |e| AppError::Other(format!("{}: {e}", path.display()))
}

/// `base` (the built-in default when `None`) with `--set` overrides on top.
pub fn layered_config(base: Option<&Path>, sets: &[String]) -> Result<Config, AppError> {
    let mut cfg = match base {
        Some(p) => Config::load(p)?,
        None => default_config(),
    };
    for s in sets {
        cfg.set(s)?;
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Rfc,
    Cnn,
    Transfer,
    Ablate,
    DspDemo,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Rfc, Task::Cnn, Task::Transfer, Task::Ablate, Task::DspDemo];

    pub fn name(self) -> &'static str {
        match self {
            Task::Rfc => "rfc",
            Task::Cnn => "cnn",
            Task::Transfer => "transfer",
            Task::Ablate => "ablate",
            Task::DspDemo => "dsp-demo",
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Task::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Task::ALL.iter().map(|t| t.name()).collect();
            format!("unknown task `{s}`, expected one of: {}", names.join(", "))
        })
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const TOP_LEVEL: &[&str] = &["cohort.*", "profile.*", "window.*", "rfc.*", "cnn.*", "transfer.*", "ablation.*"];

fn window_config(cfg: &Config) -> Result<WindowConfig, AppError> {
    let sec = cfg.section("window");
    sec.check_known(&["rate", "seconds", "overlap", "standardization"])?;
    let rate: f64 = sec.get_or("rate", COMMON_RATE)?;
    if rate != COMMON_RATE {
        return Err(AppError::Config(format!("window.rate must be {COMMON_RATE}, the rate datasets are stored at")));
    }
    let standardization = match sec.get_or::<String>("standardization", "per-participant".into())?.as_str() {
        "per-participant" => Standardization::PerParticipant,
        "strict" => Standardization::Strict,
        other => {
            return Err(AppError::Config(format!(
                "window.standardization: `{other}` is neither `per-participant` nor `strict`"
            )))
        }
    };
    let w = WindowConfig {
        rate,
        window_seconds: sec.get_or("seconds", 30.0)?,
        overlap: sec.get_or("overlap", 0.3)?,
        standardization,
    };
    if !(w.window_seconds > 0.0) || !(0.0..1.0).contains(&w.overlap) {
        return Err(AppError::Config("window.seconds must be positive and window.overlap in [0, 1)".into()));
    }
    Ok(w)
}

fn eval_config(cfg: &Config) -> Result<EvalConfig, AppError> {
    let d = EvalConfig::default();
    let rfc = cfg.section("rfc");
    rfc.check_known(&["trees", "max_depth", "min_leaf"])?;
    let depth: usize = rfc.get_or("max_depth", 0)?;
    let rfc = RfcConfig {
        trees: rfc.get_or("trees", d.rfc.trees)?,
        max_depth: (depth > 0).then_some(depth),
        min_leaf: rfc.get_or("min_leaf", d.rfc.min_leaf)?,
        seed: 0,
    };
    if rfc.trees == 0 || rfc.min_leaf == 0 {
        return Err(AppError::Config("rfc.trees and rfc.min_leaf must be positive".into()));
    }

    let c = cfg.section("cnn");
    c.check_known(&["channels", "kernel", "pool", "fc1", "dropout", "lr", "epochs", "lr_decay", "weight_decay", "batch_size"])?;
    let channels: Vec<usize> = c.get_list("channels")?.unwrap_or_else(|| d.cnn.blocks.iter().map(|b| b.out_channels).collect());
    let (kernel, pool) = (c.get_or("kernel", 5)?, c.get_or("pool", 5)?);
    let cnn = CnnConfig {
        blocks: channels
            .into_iter()
            .map(|out_channels| ConvSpec { out_channels, kernel, pool })
            .collect(),
        fc1: c.get_or("fc1", d.cnn.fc1)?,
        dropout: c.get_or("dropout", d.cnn.dropout)?,
        ..d.cnn
    };
    let train = TrainConfig {
        learning_rate: c.get_or("lr", d.train.learning_rate)?,
        epochs: c.get_or("epochs", d.train.epochs)?,
        lr_decay: c.get_or("lr_decay", d.train.lr_decay)?,
        weight_decay: c.get_or("weight_decay", d.train.weight_decay)?,
        batch_size: c.get_or("batch_size", d.train.batch_size)?,
        seed: 0,
    };

    let t = cfg.section("transfer");
    t.check_known(&["lr", "epochs", "lr_decay", "weight_decay", "shots", "batch_size"])?;
    let transfer = TrainConfig {
        learning_rate: t.get_or("lr", d.transfer.learning_rate)?,
        epochs: t.get_or("epochs", d.transfer.epochs)?,
        lr_decay: t.get_or("lr_decay", d.transfer.lr_decay)?,
        weight_decay: t.get_or("weight_decay", d.transfer.weight_decay)?,
        batch_size: t.get_or("batch_size", d.transfer.batch_size)?,
        seed: 0,
    };
    let shots = t.get_or("shots", d.shots)?;
    for tc in [&train, &transfer] {
        tc.validate().map_err(|e| AppError::Config(e.to_string()))?;
    }
    if shots == 0 {
        return Err(AppError::Config("transfer.shots must be at least 1".into()));
    }
    Ok(EvalConfig {
        rfc,
        cnn,
        train,
        transfer,
        shots,
    })
}

fn ablation_specs(cfg: &Config) -> Result<Vec<AblationSpec>, AppError> {
    let sec = cfg.section("ablation");
    let mut specs = vec![AblationSpec::new("all", &crate::activity::CHANNELS)];
    for name in sec.keys() {
        let channels: Vec<String> = sec.get_list(name)?.unwrap_or_default();
        if let Some(bad) = channels.iter().find(|c| !crate::activity::CHANNELS.contains(&c.as_str())) {
            return Err(AppError::Config(format!("ablation.{name}: unknown channel `{bad}`")));
        }
        specs.push(AblationSpec {
            name: name.to_string(),
            channels,
        });
    }
    Ok(specs)
}

/// Everything parsed out of a configuration.
#[derive(Debug, Clone)]
pub struct Settings {
    pub cohort: CohortConfig,
    pub profiles: ProfileSet,
    pub window: WindowConfig,
    pub eval: EvalConfig,
    /// The full channel set first, then `ablation.*` in key order.
    pub ablation: Vec<AblationSpec>,
}

impl Settings {
    pub fn from_config(cfg: &Config) -> Result<Self, AppError> {
        cfg.check_known(TOP_LEVEL)?;
        let window = window_config(cfg)?;
        let cohort = CohortConfig::from_config(cfg)?;
        let profiles = ProfileSet::from_config(cfg)?;
        for spec in cohort.participants(0) {
            spec.validate(window.window_seconds)?;
        }
        Ok(Self {
            cohort,
            profiles,
            window,
            eval: eval_config(cfg)?,
            ablation: ablation_specs(cfg)?,
        })
    }
}

/// Generates the cohort into `out` and returns its manifest.
pub fn synth(cfg: &Config, out: &Path, seed: u64, exec: Exec) -> Result<Manifest, AppError> {
    let settings = Settings::from_config(cfg)?;
    std::fs::create_dir_all(out).map_err(io(out))?;
    let specs = settings.cohort.participants(seed);
    let streams = gen_cohort(&specs, &settings.profiles, exec);
    let uniform = exec
        .map(&streams, |s| resample(s, COMMON_RATE))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut entries = Vec::with_capacity(specs.len());
    for (spec, stream) in specs.iter().zip(&uniform) {
        let file = format!("{}.csv", spec.id);
        let path = out.join(&file);
        write_csv(stream, &path)?;
        entries.push(ManifestEntry {
            participant_id: spec.id.clone(),
            sha256: file_sha256(&path)?,
            file,
            intensity: spec.personal_scale.intensity,
        });
    }
    let text = cfg.canonical_text();
    let cfg_path = out.join(CONFIG_FILE);
    std::fs::write(&cfg_path, &text).map_err(io(&cfg_path))?;

    let ds = HarDataset::from_streams(&uniform, &settings.window, DataProvenance { seed, config_hash: cfg.hash() }, exec);
    let manifest = Manifest {
        seed,
        config_hash: cfg.hash(),
        config_file: CONFIG_FILE.into(),
        lfi_rate: LFI_RATE,
        imu_rate: IMU_RATE,
        common_rate: COMMON_RATE,
        raw_windows: ds.windows.len(),
        balanced_windows: ds.balanced_count()?,
        participants: entries,
    };
    let mpath = out.join(MANIFEST_FILE);
    std::fs::write(&mpath, manifest.to_text()).map_err(io(&mpath))?;
    Ok(manifest)
}

/// Options of the `run` command.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Dataset directory or manifest file.
    pub dataset: PathBuf,
    pub task: Task,
    /// Replaces the dataset's stored configuration.
    pub config: Option<PathBuf>,
    pub sets: Vec<String>,
    /// Defaults to the dataset seed.
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Folds evaluated at the same time.
    pub jobs: usize,
}

/// What a run produced. `stdout` ends with the line the CLI prints last.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub stdout: String,
    pub files: Vec<PathBuf>,
    pub macro_f1: Option<f64>,
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

/// Loads and verifies a dataset: participant checksums and the stored
/// configuration's hash.
pub fn open_dataset(path: &Path) -> Result<(LoadedManifest, Config), AppError> {
    let mpath = manifest_path(path);
    let loaded = LoadedManifest::load(&mpath).map_err(|e| AppError::Integrity(format!("{}: {e}", mpath.display())))?;
    loaded.verify()?;
    let cpath = loaded.dir.join(&loaded.manifest.config_file);
    let stored = Config::load(&cpath).map_err(|e| AppError::Integrity(e.to_string()))?;
    if stored.hash() != loaded.manifest.config_hash {
        return Err(AppError::Integrity(format!(
            "{}: hash {} does not match manifest {}",
            cpath.display(),
            stored.hash(),
            loaded.manifest.config_hash
        )));
    }
    Ok((loaded, stored))
}

fn write_file(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<(), AppError> {
    std::fs::write(&path, text).map_err(io(&path))?;
    files.push(path);
    Ok(())
}

pub fn run(opts: &RunOptions) -> Result<RunOutput, AppError> {
    if opts.jobs == 0 {
        return Err(AppError::Config("--jobs must be at least 1".into()));
    }
    std::fs::create_dir_all(&opts.out).map_err(io(&opts.out))?;
    if opts.task == Task::DspDemo {
        let cfg = layered_config(opts.config.as_deref(), &opts.sets)?;
        return dsp_demo(&opts.out, opts.seed.unwrap_or(0), &cfg);
    }
    let (loaded, stored) = open_dataset(&opts.dataset)?;
    let cfg = match &opts.config {
        Some(p) => Config::load(p)?,
        None => stored,
    };
    let mut cfg = cfg;
    for s in &opts.sets {
        cfg.set(s)?;
    }
    let settings = Settings::from_config(&cfg)?;
    let seed = opts.seed.unwrap_or(loaded.manifest.seed);
    let exec = Exec::default();

    let streams = loaded.read_streams(exec)?;
    let ds = HarDataset::from_streams(&streams, &settings.window, DataProvenance { seed, config_hash: cfg.hash() }, exec);
    let shifted: Vec<&ManifestEntry> = loaded.manifest.participants.iter().filter(|p| p.intensity != 1.0 && (p.intensity >= 1.5 || p.intensity <= 1.0 / 1.5)).collect();

    let mut prov = Provenance {
        lines: vec![
            ("tool".into(), format!("lfi-har {}", env!("CARGO_PKG_VERSION"))),
            ("task".into(), opts.task.name().into()),
            ("seed".into(), seed.to_string()),
            ("config_hash".into(), cfg.hash()),
            ("dataset_seed".into(), loaded.manifest.seed.to_string()),
            ("dataset_config_hash".into(), loaded.manifest.config_hash.clone()),
            (
                "standardization".into(),
                match settings.window.standardization {
                    Standardization::PerParticipant => "per-participant",
                    Standardization::Strict => "strict",
                }
                .into(),
            ),
        ],
    };
    let mut files = Vec::new();
    let mut stdout = String::new();
    let task = opts.task.name();
    let out = &opts.out;
    let vocab: Vec<Activity> = ds.vocabulary.clone();

    let macro_f1 = match opts.task {
        Task::Rfc | Task::Cnn | Task::Transfer => {
            let kind = match opts.task {
                Task::Rfc => ModelKind::Rfc,
                Task::Cnn => ModelKind::Cnn,
                _ => ModelKind::CnnTransfer,
            };
            if kind == ModelKind::CnnTransfer {
                prov.lines.push(("transfer_shots".into(), format!("{} per class, excluded from evaluation", settings.eval.shots)));
                let ids: Vec<String> = shifted.iter().map(|p| format!("{} ({})", p.participant_id, p.intensity)).collect();
                prov.lines.push(("shifted_participants".into(), if ids.is_empty() { "none".into() } else { ids.join(", ") }));
            }
            let reports = eval::run_models(&ds, &[kind], &settings.eval, seed, "all", opts.jobs, exec)?;
            let refs: Vec<&EvalReport> = reports.iter().collect();
            write_file(out.join(format!("{task}_summary.txt")), &eval::text_summary(&refs, &vocab, &prov), &mut files)?;
            write_file(out.join(format!("{task}_folds.csv")), &eval::folds_csv(&refs, &vocab, &prov), &mut files)?;
            write_file(out.join(format!("{task}_summary.csv")), &eval::summary_csv(&refs, &prov), &mut files)?;
            let r = &reports[0];
            for f in &r.folds {
                write!(stdout, "{} {} macro_f1 {:.4}", r.model.name(), f.participant, f.metrics.macro_f1).unwrap();
                if let Some(b) = &f.baseline {
                    write!(stdout, " (plain {:.4})", b.macro_f1).unwrap();
                }
                stdout.push('\n');
            }
            r.mean_macro_f1()
        }
        Task::Ablate => {
            prov.lines.push(("model".into(), ModelKind::Cnn.name().into()));
            let table = eval::run_ablation(&ds, &settings.ablation, ModelKind::Cnn, &settings.eval, seed, opts.jobs, exec)?;
            write_file(out.join("ablate_summary.txt"), &eval::ablation_text(&table, &prov), &mut files)?;
            write_file(out.join("ablate_table.csv"), &eval::ablation_csv(&table, &prov), &mut files)?;
            let refs: Vec<&EvalReport> = table.rows.iter().map(|r| &r.report).collect();
            write_file(out.join("ablate_folds.csv"), &eval::folds_csv(&refs, &vocab, &prov), &mut files)?;
            for r in &table.rows {
                writeln!(stdout, "ablation {} macro_f1 {:.4}", r.spec.name, r.report.mean_macro_f1()).unwrap();
            }
            table.rows[0].report.mean_macro_f1()
        }
        Task::DspDemo => unreachable!(),
    };
    writeln!(stdout, "macro_f1={macro_f1:.6}").unwrap();
    Ok(RunOutput {
        stdout,
        files,
        macro_f1: Some(macro_f1),
    })
}

/// Tolerances of the signal-processing round trip.
pub const DSP_DISTANCE_TOL: f64 = 0.1e-3;

pub fn dsp_velocity_tol(v: f64) -> f64 {
    (0.01 * v.abs()).max(1e-3)
}

/// Round trip of random distance/velocity pairs through interference
/// synthesis, frequency extraction and conversion back.
fn dsp_demo(out: &Path, seed: u64, cfg: &Config) -> Result<RunOutput, AppError> {
    let laser = LaserParams::default();
    let ramp = RampConfig::default();
    let n: usize = cfg.get_or("dsp.samples", 200)?;
    let mut r = rng::sub_rng(seed, "dsp-demo");
    let samples: Vec<MotionSample> = (0..n)
        .map(|_| MotionSample::new(r.random_range(15e-3..35e-3), r.random_range(-0.05..0.05)))
        .collect();
    let measured = lfi::roundtrip_batch(&samples, &laser, &ramp, Exec::default()).map_err(|e| AppError::Other(e.to_string()))?;
    let (mut max_d, mut max_v, mut fails) = (0.0f64, 0.0f64, 0usize);
    for (s, m) in samples.iter().zip(&measured) {
        let (ed, ev) = ((m.distance - s.distance).abs(), (m.velocity - s.velocity).abs());
        max_d = max_d.max(ed);
        max_v = max_v.max(ev);
        if ed > DSP_DISTANCE_TOL || ev > dsp_velocity_tol(s.velocity) {
            fails += 1;
        }
    }
    let mut files = Vec::new();
    if let Some(first) = samples.first() {
        let signal = lfi::synth_interference(first, &laser, &ramp).map_err(|e| AppError::Other(e.to_string()))?;
        let path = out.join("dsp_demo_waveform.bin");
        let mut bytes = Vec::new();
        lfi::write_waveform(&mut bytes, &signal, ramp.adc_rate as u32).map_err(io(&path))?;
        std::fs::write(&path, bytes).map_err(io(&path))?;
        files.push(path);
    }
    let mut stdout = String::new();
    writeln!(stdout, "samples {n}, seed {seed}").unwrap();
    writeln!(stdout, "max distance error {:.3e} m (tolerance {:.1e} m)", max_d, DSP_DISTANCE_TOL).unwrap();
    writeln!(stdout, "max velocity error {:.3e} m/s (tolerance max(1 %, 1e-3 m/s))", max_v).unwrap();
    writeln!(stdout, "dsp_roundtrip distance_error={max_d:.3e} velocity_error={max_v:.3e} failures={fails}").unwrap();
    if fails > 0 {
        return Err(AppError::Other(format!("{stdout}{fails} of {n} samples outside tolerance")));
    }
    Ok(RunOutput {
        stdout,
        files,
        macro_f1: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_settings_parse() {
        let s = Settings::from_config(&default_config()).unwrap();
        assert_eq!(s.eval.cnn.blocks.len(), 4);
        assert_eq!(s.eval.shots, 3);
        assert_eq!(s.ablation.iter().map(|a| a.name.as_str()).collect::<Vec<_>>(), ["all", "imu", "lfi"]);
    }

    #[test]
    fn config_errors_map_to_exit_2() {
        let mut cfg = default_config();
        cfg.set("window.overlap=1.5").unwrap();
        assert_eq!(Settings::from_config(&cfg).unwrap_err().exit_code(), 2);
        let mut cfg = default_config();
        cfg.set("bogus.key=1").unwrap();
        assert_eq!(Settings::from_config(&cfg).unwrap_err().exit_code(), 2);
        assert!("train".parse::<Task>().is_err());
    }
}
