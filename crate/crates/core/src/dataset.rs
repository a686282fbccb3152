//! Data preparation: resampling to a common rate, per-participant
//! standardization, sliding windows with majority labels, class balancing,
//! leave-one-participant-out splits, and the CSV/manifest file format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng as _;

use crate::activity::{label_name, parse_label, Activity, SampleLabel, CHANNELS};
use crate::par::Exec;
use crate::rng::{self, sha256_hex};

pub const COMMON_RATE: f64 = 120.0;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("target rate {target} Hz exceeds channel `{channel}` rate {source_rate} Hz")]
    RateMismatch {
        channel: String,
        target: f64,
        source_rate: f64,
    },
    #[error("class `{0}` has no windows")]
    EmptyClass(Activity),
    #[error("need at least two participants, found {0}")]
    TooFewParticipants(usize),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("checksum mismatch for {path}: manifest has {expected}, file has {actual}")]
    Checksum {
        path: String,
        expected: String,
        actual: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub rate: f64,
    pub data: Vec<f64>,
}

/// A participant's recording. Labels are given at `label_rate`, the
/// finest channel rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    pub participant_id: String,
    pub channels: Vec<Channel>,
    pub label_rate: f64,
    pub labels: Vec<SampleLabel>,
}

impl SensorStream {
    pub fn duration(&self) -> f64 {
        self.labels.len() as f64 / self.label_rate
    }

    /// True if every channel and the labels share one rate.
    pub fn is_uniform(&self) -> bool {
        self.channels
            .iter()
            .all(|c| c.rate == self.label_rate && c.data.len() == self.labels.len())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Bin-averages every channel onto a `target_rate` timeline. Output sample
/// `j` averages source samples `floor(j r) .. floor((j+1) r)` with
/// `r = rate / target_rate`; its label is the source label nearest to
/// `j / target_rate`.
pub fn resample(stream: &SensorStream, target_rate: f64) -> Result<SensorStream, DatasetError> {
    for c in &stream.channels {
        if target_rate > c.rate {
            return Err(DatasetError::RateMismatch {
                channel: c.name.clone(),
                target: target_rate,
                source_rate: c.rate,
            });
        }
    }
    if target_rate > stream.label_rate {
        return Err(DatasetError::RateMismatch {
            channel: "label".into(),
            target: target_rate,
            source_rate: stream.label_rate,
        });
    }
    // tolerate float noise in durations that sit on whole target samples
    let out_len = (stream.duration() * target_rate + 1e-6).floor() as usize;
    let channels = stream
        .channels
        .iter()
        .map(|c| {
            let r = c.rate / target_rate;
            let n = c.data.len();
            let data = (0..out_len)
                .map(|j| {
                    let a = ((j as f64 * r) as usize).min(n.saturating_sub(1));
                    let b = (((j + 1) as f64 * r) as usize).clamp(a + 1, n.max(a + 1));
                    let bin = &c.data[a..b.min(n)];
                    bin.iter().sum::<f64>() / bin.len().max(1) as f64
                })
                .collect();
            Channel {
                name: c.name.clone(),
                rate: target_rate,
                data,
            }
        })
        .collect();
    let r = stream.label_rate / target_rate;
    let last = stream.labels.len().saturating_sub(1);
    let labels = (0..out_len)
        .map(|j| stream.labels[((j as f64 * r).round() as usize).min(last)])
        .collect();
    Ok(SensorStream {
        participant_id: stream.participant_id.clone(),
        channels,
        label_rate: target_rate,
        labels,
    })
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn of_stream(stream: &SensorStream) -> Self {
        let (mean, std) = stream
            .channels
            .iter()
            .map(|c| mean_std(c.data.iter().copied()))
            .unzip();
        Self { mean, std }
    }

    /// Pooled over every sample of every window; windows are `T x S`,
    /// time-major.
    pub fn of_windows(windows: &[LabeledWindow]) -> Self {
        let s = windows.first().map_or(0, |w| w.channels);
        let (mean, std) = (0..s)
            .map(|c| {
                mean_std(
                    windows
                        .iter()
                        .flat_map(|w| w.data.iter().skip(c).step_by(s).map(|&x| x as f64)),
                )
            })
            .unzip();
        Self { mean, std }
    }

    fn scale(&self, c: usize, x: f64) -> f64 {
        if self.std[c] > 0.0 {
            (x - self.mean[c]) / self.std[c]
        } else {
            0.0
        }
    }
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = xs.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Zero mean, unit population variance per channel over the whole stream.
/// Constant channels become all zeros.
pub fn standardize(stream: &SensorStream) -> SensorStream {
    let stats = ChannelStats::of_stream(stream);
    let mut out = stream.clone();
    for (c, ch) in out.channels.iter_mut().enumerate() {
        ch.data.iter_mut().for_each(|x| *x = stats.scale(c, *x));
    }
    out
}

/// One `T x S` sample, stored time-major (`data[t * S + s]`).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub data: Arc<[f32]>,
    pub len: usize,
    pub channels: usize,
    pub label: Activity,
    pub participant_id: Arc<str>,
    pub window_index: usize,
}

impl LabeledWindow {
    pub fn at(&self, t: usize, s: usize) -> f32 {
        self.data[t * self.channels + s]
    }

    /// Copy keeping only the channels in `keep`, in that order.
    pub fn select(&self, keep: &[usize]) -> LabeledWindow {
        let data: Vec<f32> = (0..self.len)
            .flat_map(|t| keep.iter().map(move |&s| (t, s)))
            .map(|(t, s)| self.at(t, s))
            .collect();
        LabeledWindow {
            data: data.into(),
            channels: keep.len(),
            ..self.clone()
        }
    }
}

/// Stride in samples for a window of `len` samples; the epsilon keeps
/// products like 0.7 * 3600 from rounding down a sample.
pub fn window_stride(len: usize, overlap: f64) -> usize {
    ((len as f64 * (1.0 - overlap)) + 1e-9).floor().max(1.0) as usize
}

pub fn window_count(total: usize, len: usize, stride: usize) -> usize {
    if total < len || len == 0 {
        0
    } else {
        (total - len) / stride + 1
    }
}

/// Most frequent label; ties go to the label that occurs first.
pub fn modal_label(labels: &[SampleLabel]) -> SampleLabel {
    let mut counts: Vec<(SampleLabel, usize)> = Vec::new();
    for &l in labels {
        match counts.iter_mut().find(|(k, _)| *k == l) {
            Some((_, c)) => *c += 1,
            None => counts.push((l, 1)),
        }
    }
    let mut best: Option<(SampleLabel, usize)> = None;
    for (l, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((l, c));
        }
    }
    best.and_then(|(l, _)| l)
}

/// Cuts a uniform stream into `window_seconds` windows. Windows whose modal
/// label is a transition are dropped; `window_index` is the position among
/// all candidate windows, kept or not.
pub fn window(stream: &SensorStream, window_seconds: f64, overlap: f64) -> Vec<LabeledWindow> {
    assert!(stream.is_uniform(), "window() needs a uniform-rate stream");
    let len = (window_seconds * stream.label_rate).round() as usize;
    let stride = window_stride(len, overlap);
    let s = stream.channels.len();
    let pid: Arc<str> = stream.participant_id.as_str().into();
    (0..window_count(stream.len(), len, stride))
        .filter_map(|k| {
            let start = k * stride;
            let label = modal_label(&stream.labels[start..start + len])?;
            let mut data = Vec::with_capacity(len * s);
            for t in start..start + len {
                data.extend(stream.channels.iter().map(|c| c.data[t] as f32));
            }
            Some(LabeledWindow {
                data: data.into(),
                len,
                channels: s,
                label,
                participant_id: pid.clone(),
                window_index: k,
            })
        })
        .collect()
}

pub fn class_counts(windows: &[LabeledWindow]) -> BTreeMap<Activity, usize> {
    let mut m = BTreeMap::new();
    for w in windows {
        *m.entry(w.label).or_insert(0) += 1;
    }
    m
}

/// Upsamples minority classes of `vocabulary` with seeded duplicates drawn
/// uniformly with replacement. Originals come first, in input order.
pub fn balance(windows: &[LabeledWindow], vocabulary: &[Activity], seed: u64) -> Result<Vec<LabeledWindow>, DatasetError> {
    let mut by_class: BTreeMap<Activity, Vec<usize>> = vocabulary.iter().map(|&a| (a, Vec::new())).collect();
    for (i, w) in windows.iter().enumerate() {
        if let Some(v) = by_class.get_mut(&w.label) {
            v.push(i);
        }
    }
    if let Some((&a, _)) = by_class.iter().find(|(_, v)| v.is_empty()) {
        return Err(DatasetError::EmptyClass(a));
    }
    let target = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut r = rng::sub_rng(seed, "balance");
    let mut out = windows.to_vec();
    for idx in by_class.values() {
        for _ in idx.len()..target {
            out.push(windows[idx[r.random_range(0..idx.len())]].clone());
        }
    }
    Ok(out)
}

/// Where dataset-level statistics for standardization come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Standardization {
    /// Each participant's full stream, before splitting.
    #[default]
    PerParticipant,
    /// Training-fold windows only; test windows reuse those statistics.
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct HarDataset {
    pub windows: Vec<LabeledWindow>,
    pub channel_names: Vec<String>,
    pub vocabulary: Vec<Activity>,
    pub standardization: Standardization,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct WindowConfig {
    pub rate: f64,
    pub window_seconds: f64,
    pub overlap: f64,
    pub standardization: Standardization,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            rate: COMMON_RATE,
            window_seconds: 30.0,
            overlap: 0.3,
            standardization: Standardization::PerParticipant,
        }
    }
}

impl HarDataset {
    /// Windows uniform-rate participant streams.
    pub fn from_streams(streams: &[SensorStream], cfg: &WindowConfig, provenance: Provenance, exec: Exec) -> Self {
        let per: Vec<Vec<LabeledWindow>> = exec.map(streams, |s| match cfg.standardization {
            Standardization::PerParticipant => window(&standardize(s), cfg.window_seconds, cfg.overlap),
            Standardization::Strict => window(s, cfg.window_seconds, cfg.overlap),
        });
        Self {
            windows: per.into_iter().flatten().collect(),
            channel_names: streams
                .first()
                .map(|s| s.channels.iter().map(|c| c.name.clone()).collect())
                .unwrap_or_default(),
            vocabulary: Activity::ALL.to_vec(),
            standardization: cfg.standardization,
            provenance,
        }
    }

    /// Participant ids in first-appearance order.
    pub fn participants(&self) -> Vec<Arc<str>> {
        let mut ids: Vec<Arc<str>> = Vec::new();
        for w in &self.windows {
            if !ids.iter().any(|p| *p == w.participant_id) {
                ids.push(w.participant_id.clone());
            }
        }
        ids
    }

    /// Channel subset by name; unknown names are an error message.
    pub fn select_channels(&self, names: &[&str]) -> Result<HarDataset, String> {
        let keep = names
            .iter()
            .map(|n| {
                self.channel_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| format!("unknown channel `{n}`"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(HarDataset {
            windows: self.windows.iter().map(|w| w.select(&keep)).collect(),
            channel_names: names.iter().map(|s| s.to_string()).collect(),
            ..self.clone()
        })
    }

    pub fn balanced_count(&self) -> Result<usize, DatasetError> {
        Ok(balance(&self.windows, &self.vocabulary, 0)?.len())
    }
}

#[derive(Debug, Clone)]
pub struct Fold {
    pub participant: Arc<str>,
    /// Balanced windows of every other participant.
    pub train: Vec<LabeledWindow>,
    /// Unbalanced windows of `participant`.
    pub test: Vec<LabeledWindow>,
    pub seed: u64,
}

/// Seed for the fold that holds out `participant`.
pub fn fold_seed(master: u64, participant: &str) -> u64 {
    rng::derive_seed(master, &format!("fold:{participant}"))
}

fn restandardize(windows: &[LabeledWindow], stats: &ChannelStats) -> Vec<LabeledWindow> {
    windows
        .iter()
        .map(|w| {
            let s = w.channels;
            let data: Vec<f32> = w
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| stats.scale(i % s, x as f64) as f32)
                .collect();
            LabeledWindow {
                data: data.into(),
                ..w.clone()
            }
        })
        .collect()
}

/// One fold per participant. In strict mode, both sides are scaled with
/// statistics of the unbalanced training windows.
pub fn lopocv_splits(ds: &HarDataset, seed: u64) -> Result<Vec<Fold>, DatasetError> {
    let ids = ds.participants();
    if ids.len() < 2 {
        return Err(DatasetError::TooFewParticipants(ids.len()));
    }
    ids.into_iter()
        .map(|p| {
            let (mut test, mut train): (Vec<_>, Vec<_>) =
                ds.windows.iter().cloned().partition(|w| w.participant_id == p);
            if ds.standardization == Standardization::Strict {
                let stats = ChannelStats::of_windows(&train);
                train = restandardize(&train, &stats);
                test = restandardize(&test, &stats);
            }
            let fseed = fold_seed(seed, &p);
            let train = balance(&train, &ds.vocabulary, fseed)?;
            Ok(Fold {
                participant: p,
                train,
                test,
                seed: fseed,
            })
        })
        .collect()
}

pub const CSV_HEADER: &str = "t,v1,d1,v2,d2,accx,accy,accz,gyrx,gyry,gyrz,label";

/// Writes a uniform-rate stream with the ten standard channels.
pub fn write_csv(stream: &SensorStream, path: &Path) -> Result<(), DatasetError> {
    assert!(stream.is_uniform(), "CSV streams are uniform-rate");
    let names: Vec<&str> = stream.channels.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, CHANNELS, "CSV streams carry the ten standard channels");
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let mut line = String::new();
    let write = |w: &mut BufWriter<std::fs::File>, s: &str| w.write_all(s.as_bytes()).map_err(io_err(path));
    write(&mut w, CSV_HEADER)?;
    write(&mut w, "\n")?;
    for i in 0..stream.len() {
        line.clear();
        write!(line, "{:.6}", i as f64 / stream.label_rate).unwrap();
        for c in &stream.channels {
            write!(line, ",{:e}", c.data[i] as f32).unwrap();
        }
        writeln!(line, ",{}", label_name(stream.labels[i])).unwrap();
        write(&mut w, &line)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv(path: &Path, participant_id: &str) -> Result<SensorStream, DatasetError> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    let parse_err = |line: usize, message: String| DatasetError::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut lines = BufReader::new(f).lines();
    let header = lines.next().transpose().map_err(io_err(path))?.unwrap_or_default();
    if header.trim() != CSV_HEADER {
        return Err(parse_err(1, format!("expected header `{CSV_HEADER}`")));
    }
    let mut times = Vec::new();
    let mut data: Vec<Vec<f64>> = vec![Vec::new(); CHANNELS.len()];
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != CHANNELS.len() + 2 {
            return Err(parse_err(lineno, format!("expected {} fields, found {}", CHANNELS.len() + 2, fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(lineno, format!("`{s}`: {e}")));
        times.push(num(fields[0])?);
        for (c, f) in fields[1..=CHANNELS.len()].iter().enumerate() {
            data[c].push(num(f)?);
        }
        labels.push(parse_label(fields[CHANNELS.len() + 1]).map_err(|e| parse_err(lineno, e.to_string()))?);
    }
    let rate = if times.len() >= 2 {
        let span = times[times.len() - 1] - times[0];
        ((times.len() - 1) as f64 / span * 1e3).round() / 1e3
    } else {
        COMMON_RATE
    };
    Ok(SensorStream {
        participant_id: participant_id.to_string(),
        channels: CHANNELS
            .iter()
            .zip(data)
            .map(|(n, d)| Channel {
                name: n.to_string(),
                rate,
                data: d,
            })
            .collect(),
        label_rate: rate,
        labels,
    })
}

pub fn file_sha256(path: &Path) -> Result<String, DatasetError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub participant_id: String,
    /// Relative to the manifest's directory.
    pub file: String,
    pub sha256: String,
    /// Behavioural intensity the participant was generated with.
    pub intensity: f64,
}

/// Index of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    /// Canonical config text, relative path.
    pub config_file: String,
    pub lfi_rate: f64,
    pub imu_rate: f64,
    pub common_rate: f64,
    pub raw_windows: usize,
    pub balanced_windows: usize,
    pub participants: Vec<ManifestEntry>,
}

const MANIFEST_VERSION: &str = "lfi-har-manifest 1";

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# {MANIFEST_VERSION}").unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "config_hash = {}", self.config_hash).unwrap();
        writeln!(s, "config_file = {}", self.config_file).unwrap();
        writeln!(s, "rate.lfi = {}", self.lfi_rate).unwrap();
        writeln!(s, "rate.imu = {}", self.imu_rate).unwrap();
        writeln!(s, "rate.common = {}", self.common_rate).unwrap();
        writeln!(s, "windows.raw = {}", self.raw_windows).unwrap();
        writeln!(s, "windows.balanced = {}", self.balanced_windows).unwrap();
        let ids: Vec<&str> = self.participants.iter().map(|p| p.participant_id.as_str()).collect();
        writeln!(s, "participants = {}", ids.join(", ")).unwrap();
        for p in &self.participants {
            let key = p.participant_id.to_lowercase();
            writeln!(s, "participant.{key}.file = {}", p.file).unwrap();
            writeln!(s, "participant.{key}.sha256 = {}", p.sha256).unwrap();
            writeln!(s, "participant.{key}.intensity = {}", p.intensity).unwrap();
        }
        s
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, crate::config::ConfigError> {
        use crate::config::Config;
        let cfg = Config::parse(text, source)?;
        let ids: Vec<String> = cfg
            .get_list::<String>("participants")?
            .ok_or_else(|| crate::config::ConfigError::MissingKey("participants".into()))?;
        let participants = ids
            .into_iter()
            .map(|id| {
                let key = id.to_lowercase();
                Ok(ManifestEntry {
                    file: cfg.require(&format!("participant.{key}.file"))?,
                    sha256: cfg.require(&format!("participant.{key}.sha256"))?,
                    intensity: cfg.get_or(&format!("participant.{key}.intensity"), 1.0)?,
                    participant_id: id,
                })
            })
            .collect::<Result<_, crate::config::ConfigError>>()?;
        Ok(Self {
            seed: cfg.require("seed")?,
            config_hash: cfg.require("config_hash")?,
            config_file: cfg.require("config_file")?,
            lfi_rate: cfg.require("rate.lfi")?,
            imu_rate: cfg.require("rate.imu")?,
            common_rate: cfg.require("rate.common")?,
            raw_windows: cfg.require("windows.raw")?,
            balanced_windows: cfg.require("windows.balanced")?,
            participants,
        })
    }
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub dir: PathBuf,
}

impl LoadedManifest {
    pub fn load(path: &Path) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let manifest = Manifest::parse(&text, &path.display().to_string())?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, dir })
    }

    /// Checks every participant file against its recorded checksum.
    pub fn verify(&self) -> Result<(), DatasetError> {
        for p in &self.manifest.participants {
            let path = self.dir.join(&p.file);
            let actual = file_sha256(&path)?;
            if actual != p.sha256 {
                return Err(DatasetError::Checksum {
                    path: path.display().to_string(),
                    expected: p.sha256.clone(),
                    actual,
                });
            }
        }
        Ok(())
    }

    pub fn read_streams(&self, exec: Exec) -> Result<Vec<SensorStream>, DatasetError> {
        exec.map(&self.manifest.participants, |p| read_csv(&self.dir.join(&p.file), &p.participant_id))
            .into_iter()
            .collect()
    }
}
