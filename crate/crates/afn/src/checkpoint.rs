//! JSON checkpoints: model hyperparameters, schema with vocabularies, and a
//! map from parameter name to `{"shape", "data"}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use afn_core::data::{FieldKind, FieldSchema, Schema, Vocabulary};
use afn_core::ensemble::EnsembleParams;
use afn_core::network::LogNormSite;
use afn_core::{AnyModel, ModelKind, ModelSpec, Parameters};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorJson {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FieldJson {
    field_id: usize,
    name: String,
    kind: String,
    vocab: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SpecJson {
    kind: String,
    embed_dim: usize,
    log_neurons: usize,
    hidden: Vec<usize>,
    batch_norm: bool,
    log_norm_site: String,
    max_order: usize,
    clamp_eps: f64,
    init_scale: f64,
    bn_momentum: f64,
    bn_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointJson {
    model: SpecJson,
    schema: Vec<FieldJson>,
    step: u64,
    params: BTreeMap<String, TensorJson>,
}

/// A model together with everything needed to rebuild and feed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub schema: Arc<Schema>,
    pub model: AnyModel,
    pub step: u64,
}

fn invalid(msg: impl Into<String>) -> AppError {
    AppError::Data(format!("invalid checkpoint: {}", msg.into()))
}

fn spec_to_json(spec: &ModelSpec) -> SpecJson {
    SpecJson {
        kind: spec.kind.name().to_string(),
        embed_dim: spec.embed_dim,
        log_neurons: spec.log_neurons,
        hidden: spec.hidden.clone(),
        batch_norm: spec.batch_norm,
        log_norm_site: spec.log_norm_site.name().to_string(),
        max_order: spec.max_order,
        clamp_eps: spec.clamp_eps,
        init_scale: spec.init_scale,
        bn_momentum: spec.bn_momentum,
        bn_eps: spec.bn_eps,
    }
}

fn spec_from_json(j: SpecJson) -> AppResult<ModelSpec> {
    let kind = ModelKind::from_name(&j.kind).ok_or_else(|| invalid(format!("unknown model `{}`", j.kind)))?;
    let site = LogNormSite::from_name(&j.log_norm_site)
        .ok_or_else(|| invalid(format!("unknown norm site `{}`", j.log_norm_site)))?;
    Ok(ModelSpec {
        kind,
        embed_dim: j.embed_dim,
        log_neurons: j.log_neurons,
        hidden: j.hidden,
        batch_norm: j.batch_norm,
        log_norm_site: site,
        max_order: j.max_order,
        clamp_eps: j.clamp_eps,
        init_scale: j.init_scale,
        bn_momentum: j.bn_momentum,
        bn_eps: j.bn_eps,
    })
}

fn schema_to_json(schema: &Schema) -> Vec<FieldJson> {
    schema
        .fields()
        .iter()
        .map(|f| FieldJson {
            field_id: f.field_id,
            name: f.name.clone(),
            kind: f.kind.code().to_string(),
            vocab: f.vocab.tokens().to_vec(),
        })
        .collect()
}

fn schema_from_json(fields: Vec<FieldJson>) -> AppResult<Schema> {
    let fields = fields
        .into_iter()
        .map(|f| match f.kind.as_str() {
            "C" => Ok(FieldSchema::categorical(
                f.field_id,
                &f.name,
                Vocabulary::from_tokens(&f.vocab),
            )),
            "N" if f.vocab.is_empty() => Ok(FieldSchema::numerical(f.field_id, &f.name)),
            other => Err(invalid(format!("field `{}` has kind `{other}`", f.name))),
        })
        .collect::<AppResult<Vec<_>>>()?;
    Ok(Schema::new(fields)?)
}

/// Serializes a model without taking ownership of it.
pub fn render(spec: &ModelSpec, schema: &Schema, model: &AnyModel, step: u64) -> String {
    let params = model
        .named_tensors()
        .into_iter()
        .map(|s| {
            (
                s.name,
                TensorJson {
                    shape: s.tensor.shape().to_vec(),
                    data: s.tensor.data().to_vec(),
                },
            )
        })
        .collect();
    let doc = CheckpointJson {
        model: spec_to_json(spec),
        schema: schema_to_json(schema),
        step,
        params,
    };
    serde_json::to_string(&doc).expect("checkpoint serializes")
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, schema: Arc<Schema>, model: AnyModel, step: u64) -> Self {
        Self {
            spec,
            schema,
            model,
            step,
        }
    }

    pub fn to_json(&self) -> String {
        render(&self.spec, &self.schema, &self.model, self.step)
    }

    pub fn from_json(text: &str) -> AppResult<Self> {
        let mut doc: CheckpointJson = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let spec = spec_from_json(doc.model)?;
        let schema = Arc::new(schema_from_json(doc.schema)?);
        let mut model = spec.build(&schema, 0)?;
        let mut slots = model.named_tensors_mut();
        if slots.len() != doc.params.len() {
            return Err(invalid(format!(
                "{} tensors stored, model has {}",
                doc.params.len(),
                slots.len()
            )));
        }
        for slot in &mut slots {
            let stored = doc
                .params
                .remove(&slot.name)
                .ok_or_else(|| invalid(format!("missing tensor `{}`", slot.name)))?;
            if stored.shape != slot.tensor.shape() || stored.data.len() != slot.tensor.len() {
                return Err(invalid(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    slot.name,
                    stored.shape,
                    slot.tensor.shape()
                )));
            }
            slot.tensor.data_mut().copy_from_slice(&stored.data);
        }
        drop(slots);
        Ok(Self {
            spec,
            schema,
            model,
            step: doc.step,
        })
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        write_text(path, &self.to_json())
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        Self::from_json(&read_text(path)?)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> AppResult<String> {
    fs::read_to_string(path).map_err(|e| AppError::io(path, e))
}

/// Blend weights plus the paths of the two sub-model checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCheckpoint {
    pub w1: f64,
    pub w2: f64,
    pub b: f64,
    pub afn_ckpt: String,
    pub dnn_ckpt: String,
}

impl EnsembleCheckpoint {
    pub fn new(params: EnsembleParams, afn_ckpt: String, dnn_ckpt: String) -> Self {
        Self {
            w1: params.w1,
            w2: params.w2,
            b: params.b,
            afn_ckpt,
            dnn_ckpt,
        }
    }

    pub fn params(&self) -> EnsembleParams {
        EnsembleParams {
            w1: self.w1,
            w2: self.w2,
            b: self.b,
        }
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        write_text(path, &serde_json::to_string_pretty(self).expect("ensemble serializes"))
    }

    /// Sub-model paths are resolved against the ensemble file's directory.
    pub fn resolve(&self, ensemble_path: &Path) -> (PathBuf, PathBuf) {
        let base = ensemble_path.parent().unwrap_or(Path::new(""));
        (base.join(&self.afn_ckpt), base.join(&self.dnn_ckpt))
    }
}

/// Either kind of model file.
pub enum AnyCheckpoint {
    Single(Box<Checkpoint>),
    Ensemble(EnsembleCheckpoint),
}

impl AnyCheckpoint {
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = read_text(path)?;
        if let Ok(e) = serde_json::from_str::<EnsembleCheckpoint>(&text) {
            return Ok(Self::Ensemble(e));
        }
        Ok(Self::Single(Box::new(Checkpoint::from_json(&text)?)))
    }
}

/// Schemas must agree on names, kinds and vocabularies.
pub fn check_same_schema(a: &Schema, b: &Schema) -> AppResult<()> {
    if a != b {
        return Err(AppError::Data("schema mismatch between checkpoints".into()));
    }
    Ok(())
}

pub fn is_categorical(schema: &Schema) -> bool {
    schema.fields().iter().all(|f| f.kind == FieldKind::Categorical)
}
