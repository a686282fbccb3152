//! Metrics, the leave-one-participant-out driver, the three-model
//! comparison and the sensor-modality ablation.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::activity::Activity;
use crate::cnn::{self, CnnConfig, CnnError, CnnModel, TrainConfig};
use crate::dataset::{lopocv_splits, DatasetError, Fold, HarDataset};
use crate::par::Exec;
use crate::personalize::{personalize, select_shots, PersonalizeError};
use crate::rfc::{stat_features, train_rfc, RfcConfig, RfcError};
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("truth has {truth} labels, prediction has {predicted}")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("no samples to score")]
    Empty,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("fold `{participant}`: {source}")]
    Fold {
        participant: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Rfc(#[from] RfcError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Personalize(#[from] PersonalizeError),
    #[error("ablation `{name}`: {message}")]
    Ablation { name: String, message: String },
}

impl EvalError {
    /// True if training produced a non-finite loss.
    pub fn is_divergence(&self) -> bool {
        match self {
            EvalError::Cnn(CnnError::NonFiniteLoss { .. }) => true,
            EvalError::Personalize(PersonalizeError::Cnn(CnnError::NonFiniteLoss { .. })) => true,
            EvalError::Fold { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub accuracy: f64,
}

impl Metrics {
    /// One-vs-rest F1 per class (0 when undefined), macro mean, accuracy.
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let c = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let per_class_f1: Vec<f64> = (0..c)
            .map(|k| {
                let tp = confusion[k][k] as f64;
                let fp = (0..c).map(|r| confusion[r][k]).sum::<usize>() as f64 - tp;
                let fn_ = confusion[k].iter().sum::<usize>() as f64 - tp;
                let denom = 2.0 * tp + fp + fn_;
                if denom == 0.0 {
                    0.0
                } else {
                    2.0 * tp / denom
                }
            })
            .collect();
        let trace: usize = (0..c).map(|k| confusion[k][k]).sum();
        Self {
            macro_f1: per_class_f1.iter().sum::<f64>() / c.max(1) as f64,
            accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
            per_class_f1,
            confusion,
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

pub fn compute_metrics(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Metrics, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut confusion = vec![vec![0; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    Ok(Metrics::from_confusion(confusion))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Rfc,
    Cnn,
    CnnTransfer,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rfc => "rfc",
            ModelKind::Cnn => "cnn",
            ModelKind::CnnTransfer => "cnn+transfer",
        }
    }
}

/// Everything the three models need.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub rfc: RfcConfig,
    /// Architecture; input length and channel count are taken from the data.
    pub cnn: CnnConfig,
    pub train: TrainConfig,
    pub transfer: TrainConfig,
    pub shots: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rfc: RfcConfig::default(),
            cnn: CnnConfig::standard(10, 7),
            train: TrainConfig::default(),
            transfer: TrainConfig {
                epochs: 10,
                batch_size: 1,
                ..TrainConfig::default()
            },
            shots: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub participant: Arc<str>,
    pub seed: u64,
    pub metrics: Metrics,
    /// For the transfer variant: plain CNN on the same shot-reduced test
    /// set, so the two are a paired comparison.
    pub baseline: Option<Metrics>,
    /// Mean training loss of the last epoch (CNN variants).
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: ModelKind,
    pub subset: String,
    pub channels: Vec<String>,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
}

fn mean_std(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

impl EvalReport {
    pub fn mean_macro_f1(&self) -> f64 {
        mean_std(self.folds.iter().map(|f| f.metrics.macro_f1)).0
    }

    pub fn std_macro_f1(&self) -> f64 {
        mean_std(self.folds.iter().map(|f| f.metrics.macro_f1)).1
    }

    /// Metrics of the confusion summed over folds.
    pub fn pooled(&self) -> Metrics {
        let c = self.folds.first().map_or(0, |f| f.metrics.confusion.len());
        let mut conf = vec![vec![0; c]; c];
        for f in &self.folds {
            for (r, row) in f.metrics.confusion.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    conf[r][k] += v;
                }
            }
        }
        Metrics::from_confusion(conf)
    }

    pub fn fold(&self, participant: &str) -> Option<&FoldResult> {
        self.folds.iter().find(|f| &*f.participant == participant)
    }
}

fn rfc_seed(fold: u64) -> u64 {
    rng::derive_seed(fold, "rfc")
}

fn cnn_seeds(fold: u64) -> (u64, u64) {
    (rng::derive_seed(fold, "cnn-init"), rng::derive_seed(fold, "cnn-train"))
}

fn transfer_seed(fold: u64) -> u64 {
    rng::derive_seed(fold, "transfer")
}

fn labels(ws: &[crate::dataset::LabeledWindow]) -> Vec<usize> {
    ws.iter().map(|w| w.label.index()).collect()
}

fn run_rfc(fold: &Fold, cfg: &EvalConfig, classes: usize, exec: Exec) -> Result<FoldResult, EvalError> {
    let train: Vec<_> = fold.train.iter().map(stat_features).collect();
    let rc = RfcConfig {
        seed: rfc_seed(fold.seed),
        ..cfg.rfc.clone()
    };
    let forest = train_rfc(&train, classes, &rc, exec)?;
    let pred: Vec<usize> = fold.test.iter().map(|w| forest.predict(&stat_features(w).values)).collect();
    Ok(FoldResult {
        participant: fold.participant.clone(),
        seed: fold.seed,
        metrics: compute_metrics(&labels(&fold.test), &pred, classes)?,
        baseline: None,
        final_loss: None,
    })
}

fn fit_cnn(fold: &Fold, cfg: &EvalConfig, ds: &HarDataset, exec: Exec) -> Result<(CnnModel<f32>, f64), EvalError> {
    let (init, train_seed) = cnn_seeds(fold.seed);
    let first = fold.train.first().ok_or(CnnError::EmptyTrainSet)?;
    let net = CnnConfig {
        input_length: first.len,
        input_channels: first.channels,
        num_classes: ds.vocabulary.len(),
        ..cfg.cnn.clone()
    };
    let mut model = CnnModel::<f32>::new(net, init)?;
    let tc = TrainConfig {
        seed: train_seed,
        ..cfg.train.clone()
    };
    let report = cnn::train(&mut model, &fold.train, &tc, exec)?;
    Ok((model, report.epoch_loss.last().copied().unwrap_or(f64::NAN)))
}

/// Fits and scores the CNN on one fold and, if asked, the personalized
/// variant from the same trained network.
fn run_cnn(fold: &Fold, cfg: &EvalConfig, ds: &HarDataset, transfer: bool, exec: Exec) -> Result<(FoldResult, Option<FoldResult>), EvalError> {
    let classes = ds.vocabulary.len();
    let (model, loss) = fit_cnn(fold, cfg, ds, exec)?;
    let pred = cnn::predict(&model, &fold.test, exec)?;
    let plain = FoldResult {
        participant: fold.participant.clone(),
        seed: fold.seed,
        metrics: compute_metrics(&labels(&fold.test), &pred, classes)?,
        baseline: None,
        final_loss: Some(loss),
    };
    if !transfer {
        return Ok((plain, None));
    }
    let tseed = transfer_seed(fold.seed);
    let split = select_shots(&fold.test, &ds.vocabulary, cfg.shots, tseed)?;
    let tc = TrainConfig {
        seed: tseed,
        ..cfg.transfer.clone()
    };
    let adapted = personalize(&model, &split.shots, &tc, exec)?;
    let truth = labels(&split.rest);
    let base_pred = cnn::predict(&model, &split.rest, exec)?;
    let pred = cnn::predict(&adapted, &split.rest, exec)?;
    let result = FoldResult {
        participant: fold.participant.clone(),
        seed: fold.seed,
        metrics: compute_metrics(&truth, &pred, classes)?,
        baseline: Some(compute_metrics(&truth, &base_pred, classes)?),
        final_loss: Some(loss),
    };
    Ok((plain, Some(result)))
}

fn with_fold<T>(fold: &Fold, r: Result<T, EvalError>) -> Result<T, EvalError> {
    r.map_err(|e| EvalError::Fold {
        participant: fold.participant.to_string(),
        source: Box::new(e),
    })
}

/// Results of the three models on the same folds.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rfc: EvalReport,
    pub cnn: EvalReport,
    pub transfer: Option<EvalReport>,
}

fn report(model: ModelKind, subset: &str, ds: &HarDataset, seed: u64, folds: Vec<FoldResult>) -> EvalReport {
    EvalReport {
        model,
        subset: subset.to_string(),
        channels: ds.channel_names.clone(),
        seed,
        folds,
    }
}

/// Runs the selected models over all folds. Up to `fold_jobs` folds run
/// at once and `exec` schedules the work inside a fold; CNN and its
/// personalized variant share one trained network per fold. Results do not
/// depend on either setting.
pub fn run_models(
    ds: &HarDataset,
    models: &[ModelKind],
    cfg: &EvalConfig,
    seed: u64,
    subset: &str,
    fold_jobs: usize,
    exec: Exec,
) -> Result<Vec<EvalReport>, EvalError> {
    let folds = lopocv_splits(ds, seed)?;
    let classes = ds.vocabulary.len();
    let want = |k| models.contains(&k);
    let run_fold = |fold: &Fold| {
        let mut out: Vec<(ModelKind, FoldResult)> = Vec::new();
        if want(ModelKind::Rfc) {
            out.push((ModelKind::Rfc, with_fold(fold, run_rfc(fold, cfg, classes, exec))?));
        }
        if want(ModelKind::Cnn) || want(ModelKind::CnnTransfer) {
            let (plain, transfer) = with_fold(fold, run_cnn(fold, cfg, ds, want(ModelKind::CnnTransfer), exec))?;
            if want(ModelKind::Cnn) {
                out.push((ModelKind::Cnn, plain));
            }
            if let Some(t) = transfer {
                out.push((ModelKind::CnnTransfer, t));
            }
        }
        Ok::<_, EvalError>(out)
    };
    let mut per_fold = Vec::with_capacity(folds.len());
    for group in folds.chunks(fold_jobs.max(1)) {
        let fold_exec = if group.len() > 1 { Exec::Parallel } else { Exec::Sequential };
        for r in fold_exec.map(group, run_fold) {
            per_fold.push(r?);
        }
    }
    Ok(models
        .iter()
        .map(|&k| {
            let results = per_fold
                .iter()
                .flat_map(|f| f.iter().filter(|(m, _)| *m == k).map(|(_, r)| r.clone()))
                .collect();
            report(k, subset, ds, seed, results)
        })
        .collect())
}

pub fn run_lopocv(ds: &HarDataset, kind: ModelKind, cfg: &EvalConfig, seed: u64, exec: Exec) -> Result<EvalReport, EvalError> {
    Ok(run_models(ds, &[kind], cfg, seed, "all", 1, exec)?.remove(0))
}

pub fn run_comparison(ds: &HarDataset, cfg: &EvalConfig, seed: u64, fold_jobs: usize, exec: Exec) -> Result<Comparison, EvalError> {
    let mut r = run_models(ds, &[ModelKind::Rfc, ModelKind::Cnn, ModelKind::CnnTransfer], cfg, seed, "all", fold_jobs, exec)?;
    let transfer = r.pop();
    let cnn = r.pop().expect("cnn report");
    let rfc = r.pop().expect("rfc report");
    Ok(Comparison { rfc, cnn, transfer })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub name: String,
    pub channels: Vec<String>,
}

impl AblationSpec {
    pub fn new(name: &str, channels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            channels: channels.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub spec: AblationSpec,
    pub report: EvalReport,
    /// Per-class F1 of the confusion pooled over folds.
    pub per_class_f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub model: ModelKind,
    pub vocabulary: Vec<Activity>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.spec.name == name)
    }

    pub fn f1(&self, name: &str, a: Activity) -> Option<f64> {
        let k = self.vocabulary.iter().position(|&v| v == a)?;
        self.row(name).map(|r| r.per_class_f1[k])
    }
}

/// LOPOCV per channel subset. Fold seeds depend only on the master seed and
/// participant, so the full-channel row reproduces the main run.
pub fn run_ablation(
    ds: &HarDataset,
    specs: &[AblationSpec],
    kind: ModelKind,
    cfg: &EvalConfig,
    seed: u64,
    fold_jobs: usize,
    exec: Exec,
) -> Result<AblationTable, EvalError> {
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        if spec.channels.is_empty() {
            return Err(EvalError::Ablation {
                name: spec.name.clone(),
                message: "empty channel subset".into(),
            });
        }
        let names: Vec<&str> = spec.channels.iter().map(String::as_str).collect();
        let sub = ds.select_channels(&names).map_err(|message| EvalError::Ablation {
            name: spec.name.clone(),
            message,
        })?;
        let report = run_models(&sub, &[kind], cfg, seed, &spec.name, fold_jobs, exec)?.remove(0);
        rows.push(AblationRow {
            per_class_f1: report.pooled().per_class_f1,
            spec: spec.clone(),
            report,
        });
    }
    Ok(AblationTable {
        model: kind,
        vocabulary: ds.vocabulary.clone(),
        rows,
    })
}

/// Report header lines, each starting with `#`.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub lines: Vec<(String, String)>,
}

impl Provenance {
    pub fn header(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            writeln!(s, "# {k}: {v}").unwrap();
        }
        s
    }
}

/// One row per fold: metadata, scores, per-class F1 and the confusion
/// matrix flattened row-major.
pub fn folds_csv(reports: &[&EvalReport], vocabulary: &[Activity], prov: &Provenance) -> String {
    let mut s = prov.header();
    let c = vocabulary.len();
    let mut header = String::from("fold,participant,model,subset,seed,n_test,macro_f1,accuracy");
    for a in vocabulary {
        write!(header, ",f1_{a}").unwrap();
    }
    for i in 0..c {
        for j in 0..c {
            write!(header, ",cm_{}_{}", vocabulary[i], vocabulary[j]).unwrap();
        }
    }
    header.push_str(",baseline_macro_f1");
    writeln!(s, "{header}").unwrap();
    for r in reports {
        for (i, f) in r.folds.iter().enumerate() {
            let m = &f.metrics;
            write!(s, "{i},{},{},{},{},{},{:.6},{:.6}", f.participant, r.model.name(), r.subset, f.seed, m.total(), m.macro_f1, m.accuracy).unwrap();
            for v in &m.per_class_f1 {
                write!(s, ",{v:.6}").unwrap();
            }
            for v in m.confusion.iter().flatten() {
                write!(s, ",{v}").unwrap();
            }
            match &f.baseline {
                Some(b) => writeln!(s, ",{:.6}", b.macro_f1).unwrap(),
                None => writeln!(s, ",").unwrap(),
            }
        }
    }
    s
}

/// Mean and std of macro F1 per report.
pub fn summary_csv(reports: &[&EvalReport], prov: &Provenance) -> String {
    let mut s = prov.header();
    writeln!(s, "model,subset,seed,folds,mean_macro_f1,std_macro_f1,pooled_accuracy").unwrap();
    for r in reports {
        writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{:.6}",
            r.model.name(),
            r.subset,
            r.seed,
            r.folds.len(),
            r.mean_macro_f1(),
            r.std_macro_f1(),
            r.pooled().accuracy
        )
        .unwrap();
    }
    s
}

pub fn ablation_csv(table: &AblationTable, prov: &Provenance) -> String {
    let mut s = prov.header();
    let mut header = String::from("subset,channels,model,mean_macro_f1");
    for a in &table.vocabulary {
        write!(header, ",f1_{a}").unwrap();
    }
    writeln!(s, "{header}").unwrap();
    for r in &table.rows {
        write!(s, "{},{},{},{:.6}", r.spec.name, r.spec.channels.join(" "), table.model.name(), r.report.mean_macro_f1()).unwrap();
        for v in &r.per_class_f1 {
            write!(s, ",{v:.6}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Plain-text summary of one or more reports.
pub fn text_summary(reports: &[&EvalReport], vocabulary: &[Activity], prov: &Provenance) -> String {
    let mut s = prov.header();
    s.push('\n');
    for r in reports {
        writeln!(s, "model {} on subset {} ({} folds)", r.model.name(), r.subset, r.folds.len()).unwrap();
        writeln!(s, "  mean macro F1 {:.4} (std {:.4})", r.mean_macro_f1(), r.std_macro_f1()).unwrap();
        for f in &r.folds {
            write!(s, "  {:<6} macro F1 {:.4}  accuracy {:.4}  n {}", f.participant, f.metrics.macro_f1, f.metrics.accuracy, f.metrics.total()).unwrap();
            if let Some(b) = &f.baseline {
                write!(s, "  (plain CNN on same windows {:.4})", b.macro_f1).unwrap();
            }
            s.push('\n');
        }
        let pooled = r.pooled();
        write!(s, "  pooled per-class F1:").unwrap();
        for (a, v) in vocabulary.iter().zip(&pooled.per_class_f1) {
            write!(s, " {a} {v:.3}").unwrap();
        }
        s.push_str("\n\n");
    }
    s
}

pub fn ablation_text(table: &AblationTable, prov: &Provenance) -> String {
    let mut s = prov.header();
    writeln!(s, "\nablation, model {}: pooled per-class F1", table.model.name()).unwrap();
    write!(s, "{:<8}", "subset").unwrap();
    for a in &table.vocabulary {
        write!(s, " {:>6}", a.name()).unwrap();
    }
    writeln!(s, "  macro").unwrap();
    for r in &table.rows {
        write!(s, "{:<8}", r.spec.name).unwrap();
        for v in &r.per_class_f1 {
            write!(s, " {v:>6.3}").unwrap();
        }
        writeln!(s, "  {:.4}", r.report.mean_macro_f1()).unwrap();
    }
    s
}
