//! Few-shot personalization: retrain only the output layer on a handful of
//! windows from the target participant.
//!
//! Convolution blocks, batch norm and FC1 stay frozen and dropout is
//! removed, so FC1 activations of the shots are computed once in eval mode
//! and FC2 is trained as a softmax regression on them.

use std::ops::Range;

use rand::seq::SliceRandom;

use crate::activity::Activity;
use crate::cnn::{head_forward, head_param_grads, softmax_ce_grad, AdamW, Batch, CnnError, CnnModel, Mode, Real, TrainConfig};
use crate::dataset::LabeledWindow;
use crate::par::Exec;
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum PersonalizeError {
    #[error("class `{class}` has {have} windows, {need} shots needed")]
    MissingClassShots { class: Activity, have: usize, need: usize },
    #[error(transparent)]
    Cnn(#[from] CnnError),
}

/// Shots and the windows left for evaluation.
#[derive(Debug, Clone)]
pub struct ShotSplit {
    pub shots: Vec<LabeledWindow>,
    pub rest: Vec<LabeledWindow>,
}

/// Draws `k` windows per class uniformly without replacement. The rest keep
/// their input order.
pub fn select_shots(windows: &[LabeledWindow], vocabulary: &[Activity], k: usize, seed: u64) -> Result<ShotSplit, PersonalizeError> {
    let mut r = rng::sub_rng(seed, "shots");
    let mut chosen = vec![false; windows.len()];
    for &class in vocabulary {
        let mut idx: Vec<usize> = (0..windows.len()).filter(|&i| windows[i].label == class).collect();
        if idx.len() < k {
            return Err(PersonalizeError::MissingClassShots {
                class,
                have: idx.len(),
                need: k,
            });
        }
        idx.shuffle(&mut r);
        idx[..k].iter().for_each(|&i| chosen[i] = true);
    }
    let (mut shots, mut rest) = (Vec::new(), Vec::new());
    for (w, c) in windows.iter().zip(chosen) {
        if c { shots.push(w.clone()) } else { rest.push(w.clone()) }
    }
    Ok(ShotSplit { shots, rest })
}

/// Returns an adapted copy of `model`: FC2 re-initialized from
/// `tc.seed` and trained on `shots`, everything else bit-identical.
pub fn personalize<T: Real>(model: &CnnModel<T>, shots: &[LabeledWindow], tc: &TrainConfig, exec: Exec) -> Result<CnnModel<T>, PersonalizeError> {
    tc.validate()?;
    let mut out = model.clone();
    out.reinit_fc2(tc.seed);
    if shots.is_empty() || tc.epochs == 0 {
        return Ok(out);
    }
    let cfg = &model.config;
    let (width, classes) = (cfg.fc1, cfg.num_classes);
    let mut features = Vec::with_capacity(shots.len() * width);
    for chunk in shots.chunks(64) {
        let ws: Vec<&LabeledWindow> = chunk.iter().collect();
        let (h, _) = model.forward_fc1(&Batch::from_windows(&ws), Mode::Eval, exec)?;
        features.extend(h);
    }
    let labels: Vec<usize> = shots.iter().map(|w| w.label.index()).collect();

    let fc2 = out.layout.fc2();
    let wlen = width * classes;
    let decay: [Range<usize>; 1] = [0..wlen];
    let mut opt = AdamW::new(fc2.len());
    let mut order: Vec<usize> = (0..shots.len()).collect();
    let mut lr = tc.learning_rate;
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng::sub_rng(tc.seed, &format!("transfer-epoch-{epoch}")));
        for (bi, idx) in order.chunks(tc.batch_size).enumerate() {
            let h: Vec<T> = idx.iter().flat_map(|&i| features[i * width..(i + 1) * width].iter().copied()).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let head = &out.params[fc2.clone()];
            let probs = head_forward(&head[..wlen], &head[wlen..], &h, idx.len(), width, classes);
            let loss = CnnModel::<T>::loss(&probs, &y, classes);
            if !loss.is_finite() {
                return Err(CnnError::NonFiniteLoss { epoch, batch: bi, loss }.into());
            }
            let g = softmax_ce_grad(&probs, &y, classes);
            let (dw, db) = head_param_grads(&g, &h, idx.len(), width, classes);
            let grads: Vec<T> = dw.into_iter().chain(db).collect();
            opt.update(&mut out.params[fc2.clone()], &grads, lr, tc.weight_decay, &decay);
        }
        lr *= tc.lr_decay;
    }
    Ok(out)
}
