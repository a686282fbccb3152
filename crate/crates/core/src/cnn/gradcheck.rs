//! Central finite-difference check of [`CnnModel::backward`] in double
//! precision.

use rand::Rng as _;

use super::{Batch, CnnConfig, CnnModel, ConvSpec, Mode};
use crate::par::Exec;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Parameters whose perturbation moved a ReLU or max-pool decision; the
    /// loss is not differentiable there and the comparison is meaningless.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Small random config: four blocks of 1-3 channels, kernel 1/3/5, pool 2,
/// input length 50, FC1 width 2-5, 2-4 classes.
pub fn random_tiny_config(seed: u64) -> CnnConfig {
    let mut r = rng::sub_rng(seed, "tiny-config");
    CnnConfig {
        input_length: 50,
        input_channels: r.random_range(1..=3),
        blocks: (0..4)
            .map(|_| ConvSpec {
                out_channels: r.random_range(1..=3),
                kernel: [1, 3, 5][r.random_range(0..3)],
                pool: 2,
            })
            .collect(),
        fc1: r.random_range(2..=5),
        dropout: 0.0,
        num_classes: r.random_range(2..=4),
        leaky_slope: 0.01,
        bn_eps: 1e-5,
        bn_momentum: 0.1,
    }
}

/// Signature of every piecewise-linear decision taken in a forward pass.
fn pattern(model: &CnnModel<f64>, x: &Batch<f64>) -> Vec<u32> {
    let (_, cache) = model.forward(x, Mode::Train, 0, Exec::Sequential).expect("valid batch");
    let mut sig = Vec::new();
    for (i, bc) in cache.blocks.iter().enumerate() {
        let gamma = &model.params[model.layout.blocks[4 * i + 2].range()];
        let beta = &model.params[model.layout.blocks[4 * i + 3].range()];
        let (lin, lout) = (model.config.lengths()[i], model.config.lengths()[i + 1]);
        let cout = gamma.len();
        sig.extend(&bc.argmax);
        for (o, &t) in bc.argmax.iter().enumerate() {
            let sc = o / lout;
            let c = sc % cout;
            let a = gamma[c] * bc.xhat[sc * lin + t as usize] + beta[c];
            sig.push(u32::from(a > 0.0));
        }
    }
    sig.extend(cache.h_pre.iter().map(|&v| u32::from(v > 0.0)));
    sig
}

fn loss(model: &CnnModel<f64>, x: &Batch<f64>, labels: &[usize]) -> f64 {
    let (p, _) = model.forward(x, Mode::Train, 0, Exec::Sequential).expect("valid batch");
    CnnModel::<f64>::loss(&p, labels, model.config.num_classes)
}

/// Checks every parameter of a freshly initialized model on a random batch.
pub fn check(config: CnnConfig, batch: usize, seed: u64) -> GradCheck {
    let mut model = CnnModel::<f64>::new(config, seed).expect("valid config");
    // non-trivial batch-norm parameters so every gradient term is exercised
    let mut r = rng::sub_rng(seed, "gradcheck");
    for i in 0..4 {
        for g in &mut model.params[model.layout.blocks[4 * i + 2].range()] {
            *g = r.random_range(0.5..1.5);
        }
        for b in &mut model.params[model.layout.blocks[4 * i + 3].range()] {
            *b = r.random_range(-0.5..0.5);
        }
    }
    let per = model.config.input_channels * model.config.input_length;
    let x = Batch {
        data: (0..batch * per).map(|_| r.random_range(-1.0..1.0)).collect(),
        n: batch,
    };
    let labels: Vec<usize> = (0..batch).map(|_| r.random_range(0..model.config.num_classes)).collect();
    let (p, cache) = model.forward(&x, Mode::Train, 0, Exec::Sequential).expect("valid batch");
    let grads = model.backward(&cache, &p, &labels, Exec::Sequential);
    let base = pattern(&model, &x);

    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst_param: None,
    };
    for i in 0..model.params.len() {
        let orig = model.params[i];
        let mut numeric = None;
        for h in [1e-4, 1e-5, 1e-6] {
            model.params[i] = orig + h;
            let (lp, sp) = (loss(&model, &x, &labels), pattern(&model, &x));
            model.params[i] = orig - h;
            let (lm, sm) = (loss(&model, &x, &labels), pattern(&model, &x));
            model.params[i] = orig;
            if sp == base && sm == base {
                numeric = Some((lp - lm) / (2.0 * h));
                break;
            }
        }
        let Some(numeric) = numeric else {
            out.skipped += 1;
            continue;
        };
        out.checked += 1;
        let e = rel_error(grads[i], numeric);
        if e > out.max_rel_error {
            out.max_rel_error = e;
            let block = model.layout.blocks.iter().find(|b| b.range().contains(&i)).expect("covered");
            out.worst_param = Some(format!("{}[{}]", block.name, i - block.offset));
        }
    }
    out
}
