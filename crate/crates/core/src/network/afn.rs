use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{BatchNorm, BnCache, Mlp, MlpCache, Mode, PredictionHead};
use crate::data::{Instance, Schema};
use crate::embedding::{clamp_backward, clamp_in_place, EmbeddingTables};
use crate::logtransform::{
    log_embeddings, saturating_exp, saturating_exp_backward, weighted_log_sum, weighted_log_sum_backward, LtlParams,
};
use crate::model::{Model, Parameters, Slot};
use crate::{Error, Result, Tensor};

/// Where the first batch norm sits relative to the weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogNormSite {
    /// Over the `m * k` log-embeddings.
    AfterLog,
    /// Over the `N * k` weighted sums, before the exponential.
    AfterWeightedSum,
}

impl LogNormSite {
    pub fn name(self) -> &'static str {
        match self {
            Self::AfterLog => "after-log",
            Self::AfterWeightedSum => "after-weighted-sum",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Self::AfterLog, Self::AfterWeightedSum]
            .into_iter()
            .find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AfnConfig {
    pub embed_dim: usize,
    pub log_neurons: usize,
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    pub log_norm_site: LogNormSite,
    pub clamp_eps: f64,
    pub init_scale: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

/// Embeddings, logarithmic transformation layer, hidden layers and head.
#[derive(Debug, Clone, PartialEq)]
pub struct Afn {
    pub config: AfnConfig,
    pub embeddings: EmbeddingTables,
    pub ltl: LtlParams,
    pub log_norm: Option<BatchNorm>,
    pub exp_norm: Option<BatchNorm>,
    pub mlp: Mlp,
    pub head: PredictionHead,
}

/// Activations of one train-mode pass.
pub struct AfnCache {
    raw: Tensor,
    pos: Tensor,
    lhat: Tensor,
    shat: Tensor,
    ys: Tensor,
    log_norm: Option<BnCache>,
    exp_norm: Option<BnCache>,
    mlp: MlpCache,
    z: Tensor,
}

impl Afn {
    pub fn new<R: Rng + ?Sized>(schema: &Schema, config: AfnConfig, rng: &mut R) -> Self {
        let (m, k, n) = (schema.len(), config.embed_dim, config.log_neurons);
        let embeddings = EmbeddingTables::uniform(schema, k, config.init_scale, rng);
        let ltl = LtlParams::uniform(m, n, rng);
        let norm = config.batch_norm.then_some((config.bn_momentum, config.bn_eps));
        let mlp = Mlp::new(n * k, &config.hidden, norm, rng);
        let head = PredictionHead::he_uniform(mlp.output_dim(n * k), rng);
        let (log_norm, exp_norm) = Self::norms(&config, m);
        Self {
            config,
            embeddings,
            ltl,
            log_norm,
            exp_norm,
            mlp,
            head,
        }
    }

    /// Assembles a model from explicit parameters. Batch norms at the
    /// logarithmic and exponential sites are created according to `config`;
    /// `mlp` carries its own hidden-layer norms.
    pub fn from_parts(
        config: AfnConfig,
        embeddings: EmbeddingTables,
        ltl: LtlParams,
        mlp: Mlp,
        head: PredictionHead,
    ) -> Result<Self> {
        let (m, k, n) = (embeddings.num_fields(), embeddings.dim(), ltl.num_neurons());
        if ltl.num_fields() != m || k != config.embed_dim || n != config.log_neurons {
            return Err(Error::Shape(format!(
                "embeddings ({m} fields, k={k}) and W {:?} disagree with config",
                ltl.weights.shape()
            )));
        }
        let first = mlp.layers.first().map_or(head.weight.len(), |l| l.input_dim());
        if first != n * k || mlp.output_dim(n * k) != head.weight.len() {
            return Err(Error::Shape(format!(
                "network input {first} / head {} do not fit {n} neurons of width {k}",
                head.weight.len()
            )));
        }
        let (log_norm, exp_norm) = Self::norms(&config, m);
        Ok(Self {
            config,
            embeddings,
            ltl,
            log_norm,
            exp_norm,
            mlp,
            head,
        })
    }

    fn norms(config: &AfnConfig, m: usize) -> (Option<BatchNorm>, Option<BatchNorm>) {
        if !config.batch_norm {
            return (None, None);
        }
        let (k, n) = (config.embed_dim, config.log_neurons);
        let log_dim = match config.log_norm_site {
            LogNormSite::AfterLog => m * k,
            LogNormSite::AfterWeightedSum => n * k,
        };
        (
            Some(BatchNorm::new(log_dim, config.bn_momentum, config.bn_eps)),
            Some(BatchNorm::new(n * k, config.bn_momentum, config.bn_eps)),
        )
    }

    fn norm_forward(norm: &Option<BatchNorm>, x: Tensor, mode: Mode) -> Result<(Tensor, Option<BnCache>)> {
        match norm {
            Some(bn) => bn.forward(&x, mode),
            None => Ok((x, None)),
        }
    }

    /// Logits for `batch`. Train mode also returns the activations needed by
    /// the reverse pass; running statistics are left untouched.
    pub fn forward(&self, batch: &[&Instance], mode: Mode) -> Result<(Vec<f64>, Option<AfnCache>)> {
        let m = self.embeddings.num_fields();
        let k = self.embeddings.dim();
        let n = self.ltl.num_neurons();
        let b = batch.len();
        let mut raw = Tensor::zeros(&[b, m * k]);
        for (r, inst) in batch.iter().enumerate() {
            self.embeddings.check(inst)?;
            self.embeddings.embed_into(inst, raw.row_mut(r));
        }
        let mut pos = raw.clone();
        clamp_in_place(pos.data_mut(), self.config.clamp_eps);
        let mut logs = Tensor::zeros(&[b, m * k]);
        for r in 0..b {
            log_embeddings(pos.row(r), k, logs.row_mut(r))?;
        }

        let after_log = self.config.log_norm_site == LogNormSite::AfterLog;
        let (lhat, log_cache_a) = if after_log {
            Self::norm_forward(&self.log_norm, logs, mode)?
        } else {
            (logs, None)
        };
        let mut sums = Tensor::zeros(&[b, n * k]);
        for r in 0..b {
            weighted_log_sum(lhat.row(r), &self.ltl.weights, k, sums.row_mut(r));
        }
        let (shat, log_cache_b) = if after_log {
            (sums, None)
        } else {
            Self::norm_forward(&self.log_norm, sums, mode)?
        };
        let mut ys = Tensor::zeros(&[b, n * k]);
        for r in 0..b {
            saturating_exp(shat.row(r), ys.row_mut(r));
        }
        let (yhat, exp_cache) = Self::norm_forward(&self.exp_norm, ys.clone(), mode)?;
        let (z, mlp_cache) = self.mlp.forward(yhat, mode)?;
        let logits = self.head.logits(&z);
        let cache = match mode {
            Mode::Infer => None,
            Mode::Train => Some(AfnCache {
                raw,
                pos,
                lhat,
                shat,
                ys,
                log_norm: log_cache_a.or(log_cache_b),
                exp_norm: exp_cache,
                mlp: mlp_cache,
                z,
            }),
        };
        Ok((logits, cache))
    }
}

impl Parameters for Afn {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        self.embeddings.slots(prefix, out);
        self.ltl.slots(prefix, out);
        if let Some(bn) = &self.log_norm {
            bn.slots_at(&format!("{prefix}bn.log."), out);
        }
        if let Some(bn) = &self.exp_norm {
            bn.slots_at(&format!("{prefix}bn.exp."), out);
        }
        self.mlp.slots_at(prefix, out);
        self.head.slots_at(prefix, out);
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        self.embeddings.slots_mut(prefix, out);
        self.ltl.slots_mut(prefix, out);
        if let Some(bn) = &mut self.log_norm {
            bn.slots_mut_at(&format!("{prefix}bn.log."), out);
        }
        if let Some(bn) = &mut self.exp_norm {
            bn.slots_mut_at(&format!("{prefix}bn.exp."), out);
        }
        self.mlp.slots_mut_at(prefix, out);
        self.head.slots_mut_at(prefix, out);
    }
}

impl Model for Afn {
    type Cache = AfnCache;

    fn forward_train(&self, batch: &[&Instance]) -> Result<(Vec<f64>, AfnCache)> {
        let (z, c) = self.forward(batch, Mode::Train)?;
        Ok((z, c.expect("train mode caches")))
    }

    fn backward(&self, batch: &[&Instance], c: &AfnCache, dlogits: &[f64]) -> Result<Self> {
        if dlogits.len() != batch.len() || c.raw.rows() != batch.len() {
            return Err(Error::Shape(format!(
                "{} upstream gradients for a batch of {}",
                dlogits.len(),
                batch.len()
            )));
        }
        let k = self.embeddings.dim();
        let b = batch.len();
        let mut grad = self.zeros_like();
        let dz = self.head.backward(&c.z, dlogits, &mut grad.head);
        let mut dy = self.mlp.backward(&c.mlp, dz, &mut grad.mlp);
        if let (Some(bn), Some(bc)) = (&self.exp_norm, &c.exp_norm) {
            dy = bn.backward(bc, &dy, grad.exp_norm.as_mut().expect("gradient mirrors model"));
        }
        let mut ds = Tensor::zeros(&[b, dy.cols()]);
        for r in 0..b {
            saturating_exp_backward(c.shat.row(r), c.ys.row(r), dy.row(r), ds.row_mut(r));
        }
        let after_log = self.config.log_norm_site == LogNormSite::AfterLog;
        let log_bn = match (&self.log_norm, &c.log_norm) {
            (Some(bn), Some(bc)) => Some((bn, bc)),
            _ => None,
        };
        if !after_log {
            if let Some((bn, bc)) = log_bn {
                ds = bn.backward(bc, &ds, grad.log_norm.as_mut().expect("gradient mirrors model"));
            }
        }
        let mut dl = Tensor::zeros(&[b, c.lhat.cols()]);
        for r in 0..b {
            weighted_log_sum_backward(
                c.lhat.row(r),
                &self.ltl.weights,
                k,
                ds.row(r),
                &mut grad.ltl.weights,
                dl.row_mut(r),
            );
        }
        if after_log {
            if let Some((bn, bc)) = log_bn {
                dl = bn.backward(bc, &dl, grad.log_norm.as_mut().expect("gradient mirrors model"));
            }
        }
        let mut draw = vec![0.0; dl.cols()];
        for (r, inst) in batch.iter().enumerate() {
            let dpos: Vec<f64> = dl.row(r).iter().zip(c.pos.row(r)).map(|(g, e)| g / e).collect();
            clamp_backward(c.raw.row(r), &dpos, self.config.clamp_eps, &mut draw);
            grad.embeddings.scatter_add(inst, &draw);
        }
        Ok(grad)
    }

    fn commit(&mut self, c: &AfnCache) {
        if let (Some(bn), Some(bc)) = (&mut self.log_norm, &c.log_norm) {
            bn.commit(bc);
        }
        if let (Some(bn), Some(bc)) = (&mut self.exp_norm, &c.exp_norm) {
            bn.commit(bc);
        }
        self.mlp.commit(&c.mlp);
    }

    fn predict_batch(&self, batch: &[&Instance]) -> Result<Vec<f64>> {
        Ok(self.forward(batch, Mode::Infer)?.0)
    }

    fn uses_batch_statistics(&self) -> bool {
        self.log_norm.is_some() || self.exp_norm.is_some() || self.mlp.uses_batch_statistics()
    }

    fn ltl(&self) -> Option<&LtlParams> {
        Some(&self.ltl)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FieldSchema, Value, Vocabulary};
    use crate::embedding::FieldTable;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(m_neurons: usize, k: usize, bn: bool) -> AfnConfig {
        AfnConfig {
            embed_dim: k,
            log_neurons: m_neurons,
            hidden: vec![],
            batch_norm: bn,
            log_norm_site: LogNormSite::AfterLog,
            clamp_eps: 1e-7,
            init_scale: 1.0,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }

    fn two_field_model(w: Tensor, k: usize, bias: f64) -> Afn {
        let e0 = Tensor::from_rows(&[&[0.0, 0.0], &[1.0, -2.0]]).unwrap();
        let e1 = Tensor::from_rows(&[&[0.0, 0.0], &[3.0, 4.0]]).unwrap();
        let tables =
            EmbeddingTables::from_tables(k, vec![FieldTable::Categorical(e0), FieldTable::Categorical(e1)]).unwrap();
        let n = w.cols();
        let ltl = LtlParams::new(w).unwrap();
        let head = PredictionHead::new(vec![1.0; n * k], bias);
        Afn::from_parts(
            config(n, k, false),
            tables,
            ltl,
            Mlp::from_layers(vec![], vec![]).unwrap(),
            head,
        )
        .unwrap()
    }

    fn inst() -> Instance {
        Instance::new(true, vec![Value::Category(1), Value::Category(1)])
    }

    #[test]
    fn one_hot_neuron_sums_clamped_embedding() {
        let model = two_field_model(Tensor::from_rows(&[&[1.0], &[0.0]]).unwrap(), 2, 0.0);
        assert_eq!(model.predict(&inst()).unwrap(), 3.0);
    }

    #[test]
    fn zero_weights_give_neuron_count_times_width() {
        let model = two_field_model(Tensor::zeros(&[2, 3]), 2, 0.25);
        assert_eq!(model.predict(&inst()).unwrap(), 6.25);
    }

    #[test]
    fn product_neuron_and_repeatability() {
        let model = two_field_model(Tensor::from_rows(&[&[1.0], &[1.0]]).unwrap(), 2, 0.0);
        let a = model.predict(&inst()).unwrap();
        assert!((a - 11.0).abs() <= 1e-12);
        assert_eq!(a.to_bits(), model.predict(&inst()).unwrap().to_bits());
    }

    #[test]
    fn one_neuron_gradient_matches_symbolic_form() {
        // logit = sum_d |e0_d|^a * |e1_d|^b with a = 0.5, b = 1.5
        let model = two_field_model(Tensor::from_rows(&[&[0.5], &[1.5]]).unwrap(), 2, 0.0);
        let x = inst();
        let (_, cache) = model.forward_train(&[&x]).unwrap();
        let g = model.backward(&[&x], &cache, &[1.0]).unwrap();
        let e0 = [1.0f64, 2.0];
        let e1 = [3.0f64, 4.0];
        let (a, b) = (0.5, 1.5);
        let da: f64 = (0..2).map(|d| e0[d].powf(a) * e1[d].powf(b) * e0[d].ln()).sum();
        let db: f64 = (0..2).map(|d| e0[d].powf(a) * e1[d].powf(b) * e1[d].ln()).sum();
        assert!((g.ltl.weights.at(0, 0) - da).abs() <= 1e-10);
        assert!((g.ltl.weights.at(1, 0) - db).abs() <= 1e-10);
        let FieldTable::Categorical(t0) = g.embeddings.table(0) else {
            panic!()
        };
        // raw e0 = [1, -2]: sign flips the second coordinate
        let d0 = a * e0[0].powf(a - 1.0) * e1[0].powf(b);
        let d1 = -a * e0[1].powf(a - 1.0) * e1[1].powf(b);
        assert!((t0.at(1, 0) - d0).abs() <= 1e-10);
        assert!((t0.at(1, 1) - d1).abs() <= 1e-10);
        assert_eq!(t0.row(0), &[0.0, 0.0]);
        assert_eq!(g.head.bias.data()[0], 1.0);
    }

    #[test]
    fn from_parts_rejects_mismatched_head() {
        let e = Tensor::filled(&[2, 2], 1.0);
        let tables =
            EmbeddingTables::from_tables(2, vec![FieldTable::Categorical(e.clone()), FieldTable::Categorical(e)])
                .unwrap();
        let ltl = LtlParams::new(Tensor::zeros(&[2, 1])).unwrap();
        let head = PredictionHead::new(vec![1.0; 3], 0.0);
        assert!(Afn::from_parts(
            config(1, 2, false),
            tables,
            ltl,
            Mlp::from_layers(vec![], vec![]).unwrap(),
            head
        )
        .is_err());
    }

    #[test]
    fn commit_is_the_only_running_stat_update() {
        let schema = Schema::new(vec![
            FieldSchema::categorical(0, "a", Vocabulary::from_tokens(["x", "y"])),
            FieldSchema::numerical(1, "b"),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = config(3, 2, true);
        cfg.hidden = vec![4];
        for site in [LogNormSite::AfterLog, LogNormSite::AfterWeightedSum] {
            cfg.log_norm_site = site;
            let mut model = Afn::new(&schema, cfg.clone(), &mut rng);
            let batch_owned: Vec<Instance> = (0..4)
                .map(|i| Instance::new(i % 2 == 0, vec![Value::Category(i % 3), Value::Number(0.5 + i as f64)]))
                .collect();
            let batch: Vec<&Instance> = batch_owned.iter().collect();
            let before = model.clone();
            let (_, cache) = model.forward_train(&batch).unwrap();
            assert_eq!(model, before);
            model.commit(&cache);
            assert_ne!(model.log_norm, before.log_norm);
            assert_ne!(model.exp_norm, before.exp_norm);
            assert_eq!(model.ltl, before.ltl);
            assert!(model.forward_train(&batch[..1]).is_err());
        }
    }
}
