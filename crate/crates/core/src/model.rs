//! Parameter naming and the common interface shared by every model class.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{Dnn, Fm, Hofm, Lr};
use crate::data::{Instance, Schema};
use crate::embedding::DEFAULT_CLAMP_EPS;
use crate::logtransform::LtlParams;
use crate::network::{Afn, AfnConfig, LogNormSite, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Updated by the optimizer.
    Trainable,
    /// Persisted state that is not trained (batch-norm running statistics).
    Buffer,
}

/// A named tensor inside a model.
#[derive(Debug)]
pub struct Slot<T> {
    pub name: String,
    pub role: Role,
    pub tensor: T,
}

impl<T> Slot<T> {
    pub fn new(name: String, role: Role, tensor: T) -> Self {
        Self { name, role, tensor }
    }
}

/// Enumerates named tensors in a fixed order. Two values of the same type
/// and configuration always list their tensors in the same order, so a
/// gradient stored as a model clone lines up slot by slot.
pub trait Parameters {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>);

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>);

    fn named_tensors(&self) -> Vec<Slot<&Tensor>> {
        let mut out = Vec::new();
        self.slots("", &mut out);
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<Slot<&mut Tensor>> {
        let mut out = Vec::new();
        self.slots_mut("", &mut out);
        out
    }

    fn trainable(&self) -> Vec<Slot<&Tensor>> {
        let mut v = self.named_tensors();
        v.retain(|s| s.role == Role::Trainable);
        v
    }

    fn trainable_mut(&mut self) -> Vec<Slot<&mut Tensor>> {
        let mut v = self.named_tensors_mut();
        v.retain(|s| s.role == Role::Trainable);
        v
    }

    fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|s| s.tensor.len()).sum()
    }
}

impl Parameters for Tensor {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        out.push(Slot::new(String::from(prefix), Role::Trainable, self));
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        out.push(Slot::new(String::from(prefix), Role::Trainable, self));
    }
}

/// A trainable binary classifier producing logits.
///
/// The train-mode forward pass is pure and returns a cache; batch-norm
/// running statistics change only through [`Model::commit`].
pub trait Model: Parameters + Clone {
    type Cache;

    fn forward_train(&self, batch: &[&Instance]) -> Result<(Vec<f64>, Self::Cache)>;

    /// Gradient of `sum_b dlogits[b] * logit_b` as a model-shaped value.
    fn backward(&self, batch: &[&Instance], cache: &Self::Cache, dlogits: &[f64]) -> Result<Self>;

    fn commit(&mut self, _cache: &Self::Cache) {}

    /// Infer-mode logits. Every row is computed independently.
    fn predict_batch(&self, batch: &[&Instance]) -> Result<Vec<f64>>;

    fn predict(&self, inst: &Instance) -> Result<f64> {
        Ok(self.predict_batch(&[inst])?[0])
    }

    /// Whether the train-mode forward pass reads batch statistics.
    fn uses_batch_statistics(&self) -> bool {
        false
    }

    fn ltl(&self) -> Option<&LtlParams> {
        None
    }

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for s in g.named_tensors_mut() {
            s.tensor.fill(0.0);
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Lr,
    Fm,
    Hofm,
    Dnn,
    Afn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [Self::Lr, Self::Fm, Self::Hofm, Self::Dnn, Self::Afn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Lr => "lr",
            Self::Fm => "fm",
            Self::Hofm => "hofm",
            Self::Dnn => "dnn",
            Self::Afn => "afn",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Hyperparameters sufficient to rebuild any model from a schema and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub embed_dim: usize,
    pub log_neurons: usize,
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    pub log_norm_site: LogNormSite,
    pub max_order: usize,
    pub clamp_eps: f64,
    pub init_scale: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            embed_dim: 10,
            log_neurons: 32,
            hidden: alloc::vec![32, 32],
            batch_norm: true,
            log_norm_site: LogNormSite::AfterLog,
            max_order: 3,
            clamp_eps: DEFAULT_CLAMP_EPS,
            init_scale: 1.0,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            bn_eps: DEFAULT_BN_EPS,
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("embed dim must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        match self.kind {
            ModelKind::Afn if self.log_neurons == 0 => Err(Error::Config("log-neurons must be positive".into())),
            ModelKind::Hofm if self.max_order < 2 || self.max_order > schema.len() => Err(Error::MaxOrder {
                order: self.max_order,
                fields: schema.len(),
            }),
            _ => Ok(()),
        }
    }

    pub fn afn_config(&self) -> AfnConfig {
        AfnConfig {
            embed_dim: self.embed_dim,
            log_neurons: self.log_neurons,
            hidden: self.hidden.clone(),
            batch_norm: self.batch_norm,
            log_norm_site: self.log_norm_site,
            clamp_eps: self.clamp_eps,
            init_scale: self.init_scale,
            bn_momentum: self.bn_momentum,
            bn_eps: self.bn_eps,
        }
    }

    /// Freshly initialized model; all randomness comes from `seed`.
    pub fn build(&self, schema: &Schema, seed: u64) -> Result<AnyModel> {
        self.validate(schema)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = self.batch_norm.then_some((self.bn_momentum, self.bn_eps));
        Ok(match self.kind {
            ModelKind::Lr => AnyModel::Lr(Lr::new(schema)),
            ModelKind::Fm => AnyModel::Fm(Fm::new(schema, self.embed_dim, self.init_scale, &mut rng)),
            ModelKind::Hofm => AnyModel::Hofm(Hofm::new(
                schema,
                self.embed_dim,
                self.max_order,
                self.init_scale,
                &mut rng,
            )?),
            ModelKind::Dnn => AnyModel::Dnn(Dnn::new(
                schema,
                self.embed_dim,
                &self.hidden,
                norm,
                self.init_scale,
                &mut rng,
            )),
            ModelKind::Afn => AnyModel::Afn(Afn::new(schema, self.afn_config(), &mut rng)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Lr(Lr),
    Fm(Fm),
    Hofm(Hofm),
    Dnn(Dnn),
    Afn(Afn),
}

pub enum AnyCache {
    Lr(<Lr as Model>::Cache),
    Fm(<Fm as Model>::Cache),
    Hofm(<Hofm as Model>::Cache),
    Dnn(<Dnn as Model>::Cache),
    Afn(<Afn as Model>::Cache),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            AnyModel::Lr($m) => $body,
            AnyModel::Fm($m) => $body,
            AnyModel::Hofm($m) => $body,
            AnyModel::Dnn($m) => $body,
            AnyModel::Afn($m) => $body,
        }
    };
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Lr(_) => ModelKind::Lr,
            Self::Fm(_) => ModelKind::Fm,
            Self::Hofm(_) => ModelKind::Hofm,
            Self::Dnn(_) => ModelKind::Dnn,
            Self::Afn(_) => ModelKind::Afn,
        }
    }

    fn prefix(&self) -> &'static str {
        match self {
            Self::Lr(_) => "lr.",
            Self::Fm(_) => "fm.",
            Self::Hofm(_) => "hofm.",
            Self::Dnn(_) => "dnn.",
            Self::Afn(_) => "",
        }
    }
}

impl Parameters for AnyModel {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        let p = format!("{prefix}{}", self.prefix());
        dispatch!(self, m => m.slots(&p, out))
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        let p = format!("{prefix}{}", self.prefix());
        dispatch!(self, m => m.slots_mut(&p, out))
    }
}

impl Model for AnyModel {
    type Cache = AnyCache;

    fn forward_train(&self, batch: &[&Instance]) -> Result<(Vec<f64>, AnyCache)> {
        Ok(match self {
            Self::Lr(m) => {
                let (z, c) = m.forward_train(batch)?;
                (z, AnyCache::Lr(c))
            }
            Self::Fm(m) => {
                let (z, c) = m.forward_train(batch)?;
                (z, AnyCache::Fm(c))
            }
            Self::Hofm(m) => {
                let (z, c) = m.forward_train(batch)?;
                (z, AnyCache::Hofm(c))
            }
            Self::Dnn(m) => {
                let (z, c) = m.forward_train(batch)?;
                (z, AnyCache::Dnn(c))
            }
            Self::Afn(m) => {
                let (z, c) = m.forward_train(batch)?;
                (z, AnyCache::Afn(c))
            }
        })
    }

    fn backward(&self, batch: &[&Instance], cache: &AnyCache, dlogits: &[f64]) -> Result<Self> {
        Ok(match (self, cache) {
            (Self::Lr(m), AnyCache::Lr(c)) => Self::Lr(m.backward(batch, c, dlogits)?),
            (Self::Fm(m), AnyCache::Fm(c)) => Self::Fm(m.backward(batch, c, dlogits)?),
            (Self::Hofm(m), AnyCache::Hofm(c)) => Self::Hofm(m.backward(batch, c, dlogits)?),
            (Self::Dnn(m), AnyCache::Dnn(c)) => Self::Dnn(m.backward(batch, c, dlogits)?),
            (Self::Afn(m), AnyCache::Afn(c)) => Self::Afn(m.backward(batch, c, dlogits)?),
            _ => return Err(Error::Config("cache from a different model class".into())),
        })
    }

    fn commit(&mut self, cache: &AnyCache) {
        match (self, cache) {
            (Self::Dnn(m), AnyCache::Dnn(c)) => m.commit(c),
            (Self::Afn(m), AnyCache::Afn(c)) => m.commit(c),
            _ => {}
        }
    }

    fn predict_batch(&self, batch: &[&Instance]) -> Result<Vec<f64>> {
        dispatch!(self, m => m.predict_batch(batch))
    }

    fn uses_batch_statistics(&self) -> bool {
        dispatch!(self, m => m.uses_batch_statistics())
    }

    fn ltl(&self) -> Option<&LtlParams> {
        dispatch!(self, m => m.ltl())
    }
}
