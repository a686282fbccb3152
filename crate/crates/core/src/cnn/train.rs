use std::ops::Range;

use rand::seq::SliceRandom;

use super::{Batch, CnnError, CnnModel, Mode, Real};
use crate::dataset::LabeledWindow;
use crate::par::Exec;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 9,
            lr_decay: 0.95,
            weight_decay: 1e-4,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        if !(self.learning_rate >= 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.batch_size == 0 {
            return Err(CnnError::InvalidConfig(
                "learning rate must be >= 0, lr decay in (0, 1], batch size positive".into(),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(CnnError::InvalidConfig("weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamW<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Updates `params` in place. `decay` lists the ranges that receive
    /// weight decay.
    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: f64, weight_decay: f64, decay: &[Range<usize>]) {
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.step));
        let c2 = T::of(1.0 - self.beta2.powi(self.step));
        let (lr_t, eps) = (T::of(lr), T::of(self.eps));
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] = params[i] - lr_t * mhat / (vhat.sqrt() + eps);
        }
        let wd = T::of(lr * weight_decay);
        for r in decay {
            // skipped when zero so lr = 0 leaves parameters bit-identical
            if wd != T::zero() {
                params[r.clone()].iter_mut().for_each(|p| *p = *p - wd * *p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub batch_loss: Vec<f64>,
}

/// Mini-batch training with a seeded per-epoch shuffle.
pub fn train<T: Real>(model: &mut CnnModel<T>, windows: &[LabeledWindow], tc: &TrainConfig, exec: Exec) -> Result<TrainReport, CnnError> {
    tc.validate()?;
    if windows.is_empty() {
        return Err(CnnError::EmptyTrainSet);
    }
    let cfg = model.config.clone();
    if let Some(w) = windows.iter().find(|w| w.channels != cfg.input_channels || w.len != cfg.input_length) {
        return Err(CnnError::ShapeMismatch(format!(
            "window of {} x {} for a network expecting {} x {}",
            w.len, w.channels, cfg.input_length, cfg.input_channels
        )));
    }
    let decay: Vec<Range<usize>> = model.layout.blocks.iter().filter(|b| b.decay).map(|b| b.range()).collect();
    let mut opt = AdamW::new(model.params.len());
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut lr = tc.learning_rate;
    let mut report = TrainReport::default();
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng::sub_rng(tc.seed, &format!("epoch-{epoch}")));
        let mut total = 0.0;
        let batches = order.chunks(tc.batch_size).count();
        for (bi, idx) in order.chunks(tc.batch_size).enumerate() {
            let ws: Vec<&LabeledWindow> = idx.iter().map(|&i| &windows[i]).collect();
            let labels: Vec<usize> = ws.iter().map(|w| w.label.index()).collect();
            let x = Batch::from_windows(&ws);
            let drop_seed = rng::derive_seed(tc.seed, &format!("dropout-{epoch}-{bi}"));
            let (probs, cache) = model.forward(&x, Mode::Train, drop_seed, exec)?;
            let loss = CnnModel::<T>::loss(&probs, &labels, cfg.num_classes);
            if !loss.is_finite() {
                return Err(CnnError::NonFiniteLoss { epoch, batch: bi, loss });
            }
            let grads = model.backward(&cache, &probs, &labels, exec);
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(CnnError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    loss: f64::NAN,
                });
            }
            model.update_running_stats(&cache);
            opt.update(&mut model.params, &grads, lr, tc.weight_decay, &decay);
            report.batch_loss.push(loss);
            total += loss;
        }
        report.epoch_loss.push(total / batches as f64);
        lr *= tc.lr_decay;
    }
    Ok(report)
}

/// Eval-mode class probabilities, `windows.len() x classes`.
pub fn probabilities<T: Real>(model: &CnnModel<T>, windows: &[LabeledWindow], exec: Exec) -> Result<Vec<T>, CnnError> {
    let mut out = Vec::with_capacity(windows.len() * model.config.num_classes);
    for chunk in windows.chunks(64) {
        let ws: Vec<&LabeledWindow> = chunk.iter().collect();
        let (p, _) = model.forward(&Batch::from_windows(&ws), Mode::Eval, 0, exec)?;
        out.extend(p);
    }
    Ok(out)
}

/// Arg-max class per window; ties go to the lowest index.
pub fn predict<T: Real>(model: &CnnModel<T>, windows: &[LabeledWindow], exec: Exec) -> Result<Vec<usize>, CnnError> {
    let c = model.config.num_classes;
    Ok(probabilities(model, windows, exec)?.chunks(c).map(argmax).collect())
}

pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
