//! Log loss, Adam, AUC, the early-stopping training loop and a central
//! difference gradient checker.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{batch_iter, Dataset, Instance};
use crate::model::{Model, Parameters};
use crate::{Error, Result, Tensor};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Log loss of one logit: `max(z, 0) - z y + ln(1 + exp(-|z|))`.
pub fn logloss_term(label: bool, z: f64) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    z.max(0.0) - z * y + libm::log1p(libm::exp(-libm::fabs(z)))
}

/// Mean log loss.
pub fn logloss(labels: &[bool], logits: &[f64]) -> Result<f64> {
    if labels.len() != logits.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} logits",
            labels.len(),
            logits.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let total: f64 = labels.iter().zip(logits).map(|(&y, &z)| logloss_term(y, z)).sum();
    Ok(total / labels.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from average ranks.
pub fn auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        let positives = order[i..j].iter().filter(|&&r| labels[r]).count();
        rank_sum += avg * positives as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub auc: f64,
    pub logloss: f64,
}

impl Metrics {
    pub fn from_logits(labels: &[bool], logits: &[f64]) -> Result<Self> {
        Ok(Self {
            auc: auc(labels, logits)?,
            logloss: logloss(labels, logits)?,
        })
    }
}

/// Infer-mode metrics over a dataset.
pub fn evaluate<M: Model>(model: &M, data: &Dataset) -> Result<Metrics> {
    let batch: Vec<&Instance> = data.instances().iter().collect();
    let logits = model.predict_batch(&batch)?;
    Metrics::from_logits(&data.labels(), &logits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 4096,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let betas = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "learning rate, batch size and epochs must be positive".into(),
            ));
        }
        if !betas(self.adam_beta1) || !betas(self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// First and second moments for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P) -> Self {
        let m: Vec<Tensor> = params.trainable().iter().map(|s| s.tensor.zeros_like()).collect();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// One bias-corrected Adam update over every trainable tensor.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    let gs = grads.trainable();
    let mut ps = params.trainable_mut();
    if gs.len() != ps.len() || ps.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} moments",
            ps.len(),
            gs.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in ps.iter().zip(&gs).zip(&state.m) {
        p.tensor.check_same_shape(g.tensor)?;
        p.tensor.check_same_shape(m)?;
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - libm::pow(b1, state.t as f64);
    let c2 = 1.0 - libm::pow(b2, state.t as f64);
    for (((p, g), m), v) in ps.iter_mut().zip(&gs).zip(&mut state.m).zip(&mut state.v) {
        let pd = p.tensor.data_mut();
        for (((x, &gi), mi), vi) in pd.iter_mut().zip(g.tensor.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *x -= cfg.learning_rate * mhat / (libm::sqrt(vhat) + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Mean log loss of a train-mode pass, its gradient and the pass cache.
pub fn loss_and_grad<M: Model>(model: &M, batch: &[&Instance]) -> Result<(f64, M, M::Cache)> {
    let (logits, cache) = model.forward_train(batch)?;
    let labels: Vec<bool> = batch.iter().map(|i| i.label).collect();
    let loss = logloss(&labels, &logits)?;
    let scale = 1.0 / batch.len() as f64;
    let dlogits: Vec<f64> = logits
        .iter()
        .zip(batch)
        .map(|(&z, inst)| (sigmoid(z) - inst.target()) * scale)
        .collect();
    let grad = model.backward(batch, &cache, &dlogits)?;
    Ok((loss, grad, cache))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_logloss: f64,
    pub val_auc: f64,
    pub val_logloss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Model state after the epoch with the highest validation AUC.
    pub best: M,
    pub best_epoch: usize,
    /// Optimizer steps taken when the best state was recorded.
    pub best_step: u64,
    pub best_metrics: Metrics,
    pub log: Vec<EpochMetrics>,
    pub steps: u64,
}

/// Mini-batch Adam with early stopping on validation AUC. `on_step` sees
/// the model after every optimizer step.
pub fn train<M, F>(
    mut model: M,
    train_set: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<TrainOutcome<M>>
where
    M: Model,
    F: FnMut(u64, &M),
{
    cfg.validate()?;
    let labels = val.labels();
    if !labels.iter().any(|&y| y) || labels.iter().all(|&y| y) {
        return Err(Error::SingleClass);
    }
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut adam = AdamState::new(&model);
    let mut best = model.clone();
    let mut best_metrics = Metrics {
        auc: f64::NEG_INFINITY,
        logloss: f64::INFINITY,
    };
    let mut best_epoch = 0;
    let mut best_step = 0;
    let mut wait = 0;
    let mut steps = 0u64;
    let mut log = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in batch_iter(train_set, cfg.batch_size, true, cfg.seed, epoch as u64) {
            if batch.len() < 2 && model.uses_batch_statistics() {
                continue;
            }
            let (loss, grad, cache) = loss_and_grad(&model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step: steps });
            }
            model.commit(&cache);
            adam_step(&mut model, &grad, &mut adam, cfg)?;
            steps += 1;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            on_step(steps, &model);
        }
        let metrics = evaluate(&model, val)?;
        if !metrics.logloss.is_finite() {
            return Err(Error::NonFiniteLoss { step: steps });
        }
        log.push(EpochMetrics {
            epoch: epoch + 1,
            train_logloss: if seen > 0 { loss_sum / seen as f64 } else { f64::NAN },
            val_auc: metrics.auc,
            val_logloss: metrics.logloss,
        });
        if metrics.auc > best_metrics.auc {
            best_metrics = metrics;
            best = model.clone();
            best_epoch = epoch + 1;
            best_step = steps;
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_step,
        best_metrics,
        log,
        steps,
    })
}

/// Largest relative error between `analytic` and central differences of
/// the mean train-mode log loss over every trainable coordinate.
///
/// The relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check_with<M: Model>(model: &M, batch: &[&Instance], h: f64, analytic: &M) -> Result<f64> {
    let labels: Vec<bool> = batch.iter().map(|i| i.label).collect();
    let loss_at = |m: &M| -> Result<f64> { logloss(&labels, &m.forward_train(batch)?.0) };
    let grads = analytic.trainable();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (s, g) in grads.iter().enumerate() {
        for i in 0..g.tensor.len() {
            let x0 = probe.trainable()[s].tensor.data()[i];
            probe.trainable_mut()[s].tensor.data_mut()[i] = x0 + h;
            let up = loss_at(&probe)?;
            probe.trainable_mut()[s].tensor.data_mut()[i] = x0 - h;
            let down = loss_at(&probe)?;
            probe.trainable_mut()[s].tensor.data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = g.tensor.data()[i];
            let rel = libm::fabs(a - numeric) / libm::fabs(a).max(libm::fabs(numeric)).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// [`grad_check_with`] against the model's own analytic gradient.
pub fn grad_check<M: Model>(model: &M, batch: &[&Instance], h: f64) -> Result<f64> {
    let (_, grad, _) = loss_and_grad(model, batch)?;
    grad_check_with(model, batch, h, &grad)
}
