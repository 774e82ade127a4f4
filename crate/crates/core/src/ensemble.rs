//! Affine blend of two frozen models on the logit scale.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, Instance};
use crate::model::Model;
use crate::training::{adam_step, logloss, sigmoid, AdamState, TrainConfig};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleParams {
    pub w1: f64,
    pub w2: f64,
    pub b: f64,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self {
            w1: 0.5,
            w2: 0.5,
            b: 0.0,
        }
    }
}

/// `w1 * afn + w2 * dnn + b`.
pub fn ensemble_logit(afn_logit: f64, dnn_logit: f64, params: &EnsembleParams) -> f64 {
    params.w1 * afn_logit + params.w2 * dnn_logit + params.b
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendConfig {
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            iterations: 4000,
        }
    }
}

/// Fits `(w1, w2, b)` by full-batch Adam on the mean log loss, starting at
/// the default blend and returning the best iterate seen.
pub fn fit_blend(afn: &[f64], dnn: &[f64], labels: &[bool], cfg: &BlendConfig) -> Result<EnsembleParams> {
    if afn.len() != dnn.len() || afn.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} / {} logits for {} labels",
            afn.len(),
            dnn.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("blend data"));
    }
    let unpack = |t: &Tensor| EnsembleParams {
        w1: t.data()[0],
        w2: t.data()[1],
        b: t.data()[2],
    };
    let loss_of = |p: &EnsembleParams| -> Result<f64> {
        let z: Vec<f64> = afn.iter().zip(dnn).map(|(&a, &d)| ensemble_logit(a, d, p)).collect();
        logloss(labels, &z)
    };
    let init = EnsembleParams::default();
    let mut theta = Tensor::from_vec(&[3], vec![init.w1, init.w2, init.b])?;
    let mut best = init;
    let mut best_loss = loss_of(&init)?;
    let adam_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        ..TrainConfig::default()
    };
    let mut state = AdamState::new(&theta);
    let n = labels.len() as f64;
    for _ in 0..cfg.iterations {
        let p = unpack(&theta);
        let mut g = [0.0; 3];
        for ((&a, &d), &y) in afn.iter().zip(dnn).zip(labels) {
            let r = (sigmoid(ensemble_logit(a, d, &p)) - if y { 1.0 } else { 0.0 }) / n;
            g[0] += r * a;
            g[1] += r * d;
            g[2] += r;
        }
        let grad = Tensor::from_vec(&[3], g.to_vec())?;
        adam_step(&mut theta, &grad, &mut state, &adam_cfg)?;
        let candidate = unpack(&theta);
        let loss = loss_of(&candidate)?;
        if loss < best_loss {
            best_loss = loss;
            best = candidate;
        }
    }
    if !best_loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: state.t });
    }
    Ok(best)
}

/// Fits the blend of two frozen models on `data`. The models are only read.
pub fn train_ensemble<A: Model, D: Model>(
    afn: &A,
    dnn: &D,
    data: &Dataset,
    cfg: &BlendConfig,
) -> Result<EnsembleParams> {
    let batch: Vec<&Instance> = data.instances().iter().collect();
    let a = afn.predict_batch(&batch)?;
    let d = dnn.predict_batch(&batch)?;
    fit_blend(&a, &d, &data.labels(), cfg)
}
