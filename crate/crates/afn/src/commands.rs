//! Command implementations. Each returns a report that `main` prints.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use afn_core::analysis::{case_study, fields_by_order_sum, snapshot_orders};
use afn_core::data::{Dataset, FieldSchema, Instance, Schema, Value, Vocabulary};
use afn_core::ensemble::{ensemble_logit, fit_blend, BlendConfig, EnsembleParams};
use afn_core::logtransform::LtlParams;
use afn_core::network::LogNormSite;
use afn_core::training::{self, EpochMetrics, Metrics, TrainConfig};
use afn_core::{AnyModel, Model, ModelKind, ModelSpec, Parameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, check_same_schema, AnyCheckpoint, Checkpoint, EnsembleCheckpoint};
use crate::cli::{
    parse_hidden, ArchArgs, Cli, Command, EnsembleArgs, EvaluateArgs, GenSynthArgs, GradcheckArgs, InspectArgs,
    ModelChoice, NormSite, Pattern, TrainArgs,
};
use crate::error::{AppError, AppResult};
use crate::synth::{Cross3, Generator};
use crate::{parallel, report, tsv};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// `path` without its extension, followed by `suffix`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.with_extension("").into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// `path` with `suffix` appended to its full file name.
fn appended(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn usage(msg: impl Into<String>) -> AppError {
    AppError::Usage(msg.into())
}

fn kind_of(choice: ModelChoice) -> Option<ModelKind> {
    match choice {
        ModelChoice::Lr => Some(ModelKind::Lr),
        ModelChoice::Fm => Some(ModelKind::Fm),
        ModelChoice::Hofm => Some(ModelKind::Hofm),
        ModelChoice::Dnn => Some(ModelKind::Dnn),
        ModelChoice::Afn => Some(ModelKind::Afn),
        ModelChoice::AfnPlus => None,
    }
}

fn site_of(site: NormSite) -> LogNormSite {
    match site {
        NormSite::AfterLog => LogNormSite::AfterLog,
        NormSite::AfterWeightedSum => LogNormSite::AfterWeightedSum,
    }
}

fn check_max_order(max_order: usize) -> AppResult<()> {
    if max_order < 2 {
        return Err(usage("max-order must be ≥ 2"));
    }
    Ok(())
}

pub fn model_spec(kind: ModelKind, arch: &ArchArgs) -> AppResult<ModelSpec> {
    check_max_order(arch.max_order)?;
    if arch.clamp_eps.is_nan() || arch.clamp_eps <= 0.0 || arch.init_scale.is_nan() || arch.init_scale <= 0.0 {
        return Err(usage("clamp-eps and init-scale must be positive"));
    }
    Ok(ModelSpec {
        embed_dim: arch.embed_dim,
        log_neurons: arch.log_neurons,
        hidden: parse_hidden(&arch.hidden).map_err(usage)?,
        batch_norm: arch.bn.is_on(),
        log_norm_site: site_of(arch.log_norm_site),
        max_order: arch.max_order,
        clamp_eps: arch.clamp_eps,
        init_scale: arch.init_scale,
        ..ModelSpec::new(kind)
    })
}

fn train_config(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        max_epochs: args.epochs,
        patience: args.patience,
        seed: args.seed,
        ..TrainConfig::default()
    }
}

/// Result of training one model.
#[derive(Debug, Clone)]
pub struct ModelReport {
    pub kind: ModelKind,
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub best_epoch: usize,
    pub best_step: u64,
    pub best: Metrics,
    pub log: Vec<EpochMetrics>,
    pub snapshots: Vec<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct BlendReport {
    pub checkpoint: PathBuf,
    pub params: EnsembleParams,
    /// Validation metrics of the blend.
    pub val: Metrics,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub models: Vec<ModelReport>,
    pub ensemble: Option<BlendReport>,
}

struct TrainContext<'a> {
    args: &'a TrainArgs,
    schema: Arc<Schema>,
    train: Dataset,
    val: Dataset,
}

fn snapshot_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("snap_{step:08}.json"))
}

fn train_one(ctx: &TrainContext, kind: ModelKind, out: &Path, metrics_csv: &Path) -> AppResult<ModelReport> {
    let args = ctx.args;
    let spec = model_spec(kind, &args.arch)?;
    let model = spec.build(&ctx.schema, args.seed)?;
    let snap_dir = (kind == ModelKind::Afn && args.snapshot_every > 0)
        .then(|| args.snapshot_dir.clone().unwrap_or_else(|| sibling(out, ".snapshots")));
    let mut snapshots = Vec::new();
    let mut snap_error = None;
    let mut save_snapshot = |step: u64, m: &AnyModel| {
        if let Some(dir) = &snap_dir {
            if snap_error.is_none() {
                let path = snapshot_path(dir, step);
                match checkpoint::write_text(&path, &checkpoint::render(&spec, &ctx.schema, m, step)) {
                    Ok(()) => snapshots.push(path),
                    Err(e) => snap_error = Some(e),
                }
            }
        }
    };
    save_snapshot(0, &model);
    let every = args.snapshot_every.max(1);
    let outcome = training::train(model, &ctx.train, &ctx.val, &train_config(args), |step, m| {
        if step % every == 0 {
            save_snapshot(step, m);
        }
    })?;
    if let Some(e) = snap_error {
        return Err(e);
    }
    Checkpoint::new(spec, ctx.schema.clone(), outcome.best, outcome.best_step).save(out)?;
    report::write_metrics(metrics_csv, &outcome.log)?;
    Ok(ModelReport {
        kind,
        checkpoint: out.to_path_buf(),
        metrics_csv: metrics_csv.to_path_buf(),
        best_epoch: outcome.best_epoch,
        best_step: outcome.best_step,
        best: outcome.best_metrics,
        log: outcome.log,
        snapshots,
    })
}

pub fn cmd_train(args: &TrainArgs) -> AppResult<TrainReport> {
    check_max_order(args.arch.max_order)?;
    parse_hidden(&args.arch.hidden).map_err(usage)?;
    if args.snapshot_every > 0 && !matches!(args.model, ModelChoice::Afn | ModelChoice::AfnPlus) {
        return Err(usage("--snapshot-every applies to afn and afn+ only"));
    }
    train_config(args).validate()?;
    let schema = Arc::new(tsv::fit_schema_path(&args.data)?);
    let ctx = TrainContext {
        args,
        train: tsv::load_dataset_path(&args.data, schema.clone())?,
        val: tsv::load_dataset_path(&args.val, schema.clone())?,
        schema,
    };
    let metrics_csv = args
        .metrics_out
        .clone()
        .unwrap_or_else(|| sibling(&args.out, ".metrics.csv"));
    let Some(kind) = kind_of(args.model) else {
        return train_plus(&ctx, &metrics_csv);
    };
    let model = train_one(&ctx, kind, &args.out, &metrics_csv)?;
    Ok(TrainReport {
        models: vec![model],
        ensemble: None,
    })
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn train_plus(ctx: &TrainContext, metrics_csv: &Path) -> AppResult<TrainReport> {
    let out = &ctx.args.out;
    let afn_path = sibling(out, ".afn.json");
    let dnn_path = sibling(out, ".dnn.json");
    let afn = train_one(ctx, ModelKind::Afn, &afn_path, &sibling(metrics_csv, ".afn.csv"))?;
    let dnn = train_one(ctx, ModelKind::Dnn, &dnn_path, &sibling(metrics_csv, ".dnn.csv"))?;
    let cfg = BlendConfig {
        learning_rate: ctx.args.blend_lr,
        iterations: ctx.args.blend_iterations,
    };
    let a = Checkpoint::load(&afn_path)?;
    let d = Checkpoint::load(&dnn_path)?;
    let (params, val) = blend(&a.model, &d.model, &ctx.val, &cfg)?;
    EnsembleCheckpoint::new(params, file_name(&afn_path), file_name(&dnn_path)).save(out)?;
    Ok(TrainReport {
        models: vec![afn, dnn],
        ensemble: Some(BlendReport {
            checkpoint: out.clone(),
            params,
            val,
        }),
    })
}

fn blend(afn: &AnyModel, dnn: &AnyModel, data: &Dataset, cfg: &BlendConfig) -> AppResult<(EnsembleParams, Metrics)> {
    let a = parallel::predict(afn, data)?;
    let d = parallel::predict(dnn, data)?;
    let labels = data.labels();
    let params = fit_blend(&a, &d, &labels, cfg)?;
    let z: Vec<f64> = a.iter().zip(&d).map(|(&x, &y)| ensemble_logit(x, y, &params)).collect();
    Ok((params, Metrics::from_logits(&labels, &z)?))
}

fn load_single(path: &Path) -> AppResult<Checkpoint> {
    match AnyCheckpoint::load(path)? {
        AnyCheckpoint::Single(c) => Ok(*c),
        AnyCheckpoint::Ensemble(_) => Err(AppError::Data(format!(
            "{}: expected a model checkpoint, found an ensemble",
            path.display()
        ))),
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> AppResult<Metrics> {
    let metrics = match AnyCheckpoint::load(&args.ckpt)? {
        AnyCheckpoint::Single(c) => {
            let data = tsv::load_dataset_path(&args.data, c.schema.clone())?;
            parallel::evaluate(&c.model, &data)?
        }
        AnyCheckpoint::Ensemble(e) => {
            let (afn_path, dnn_path) = e.resolve(&args.ckpt);
            let a = load_single(&afn_path)?;
            let d = load_single(&dnn_path)?;
            check_same_schema(&a.schema, &d.schema)?;
            let data = tsv::load_dataset_path(&args.data, a.schema.clone())?;
            let x = parallel::predict(&a.model, &data)?;
            let y = parallel::predict(&d.model, &data)?;
            let p = e.params();
            let z: Vec<f64> = x.iter().zip(&y).map(|(&u, &v)| ensemble_logit(u, v, &p)).collect();
            Metrics::from_logits(&data.labels(), &z)?
        }
    };
    if let Some(out) = &args.metrics_out {
        report::append_evaluation(
            out,
            &args.ckpt.display().to_string(),
            &args.data.display().to_string(),
            &metrics,
        )?;
    }
    Ok(metrics)
}

pub fn cmd_ensemble(args: &EnsembleArgs) -> AppResult<BlendReport> {
    let a = load_single(&args.afn)?;
    let d = load_single(&args.dnn)?;
    check_same_schema(&a.schema, &d.schema)?;
    let data = tsv::load_dataset_path(&args.data, a.schema.clone())?;
    let cfg = BlendConfig {
        learning_rate: args.blend_lr,
        iterations: args.blend_iterations,
    };
    let (params, val) = blend(&a.model, &d.model, &data, &cfg)?;
    let canonical = |p: &Path| -> AppResult<String> {
        Ok(fs::canonicalize(p)
            .map_err(|e| AppError::io(p, e))?
            .to_string_lossy()
            .into_owned())
    };
    EnsembleCheckpoint::new(params, canonical(&args.afn)?, canonical(&args.dnn)?).save(&args.out)?;
    Ok(BlendReport {
        checkpoint: args.out.clone(),
        params,
        val,
    })
}

#[derive(Debug, Clone)]
pub struct InspectReport {
    pub snapshots: usize,
    /// Field names ordered by total absolute exponent, largest first.
    pub fields_by_order: Vec<String>,
}

fn ltl_of(c: &Checkpoint, path: &Path) -> AppResult<LtlParams> {
    c.model
        .ltl()
        .cloned()
        .ok_or_else(|| AppError::Data(format!("{}: not an AFN checkpoint", path.display())))
}

pub fn cmd_inspect(args: &InspectArgs) -> AppResult<InspectReport> {
    let paths = glob::glob(&args.ckpt_glob).map_err(|e| usage(format!("bad --ckpt-glob: {e}")))?;
    let mut loaded = Vec::new();
    for p in paths {
        let p = p.map_err(|e| AppError::io(e.path().to_path_buf(), e.into()))?;
        let c = Checkpoint::load(&p)?;
        let ltl = ltl_of(&c, &p)?;
        loaded.push((c.step, p, ltl, c.schema));
    }
    if loaded.is_empty() {
        return Err(AppError::Data(format!("no checkpoints match `{}`", args.ckpt_glob)));
    }
    loaded.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let refs: Vec<(u64, &LtlParams)> = loaded.iter().map(|(s, _, l, _)| (*s, l)).collect();
    let tables = snapshot_orders(&refs)?;
    report::write_snapshots(&args.out_dir, &tables)?;
    let (ltl, schema) = match &args.case_ckpt {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            (ltl_of(&c, p)?, c.schema)
        }
        None => {
            let (_, _, l, s) = loaded.last().expect("non-empty");
            (l.clone(), s.clone())
        }
    };
    let names = schema.names();
    let cs = case_study(&ltl, &names, args.top_k)?;
    report::write_case_study(&args.out_dir, &cs)?;
    report::write_order_profile(&args.out_dir, &ltl)?;
    Ok(InspectReport {
        snapshots: loaded.len(),
        fields_by_order: fields_by_order_sum(&ltl)
            .into_iter()
            .map(|i| names[i].clone())
            .collect(),
    })
}

/// Categorical schema with `fields` fields of `cardinality` observed tokens.
fn tiny_schema(fields: usize, cardinality: usize) -> AppResult<Schema> {
    let fields = (0..fields)
        .map(|i| {
            let vocab = Vocabulary::from_tokens((0..cardinality).map(|v| format!("v{v}")));
            FieldSchema::categorical(i, &format!("f{i}"), vocab)
        })
        .collect();
    Ok(Schema::new(fields)?)
}

/// Largest relative gradient error on a random problem, with embeddings and
/// linear terms moved to magnitudes in `[0.2, 1]` so the check runs away
/// from the clamp and from the zero start.
pub fn gradcheck_error(args: &GradcheckArgs) -> AppResult<f64> {
    let kind = kind_of(args.model).ok_or_else(|| usage("gradcheck takes a single model class"))?;
    if args.fields == 0 || args.cardinality == 0 || args.batch == 0 {
        return Err(usage("fields, cardinality and batch must be positive"));
    }
    let arch = ArchArgs {
        embed_dim: args.embed_dim,
        log_neurons: args.log_neurons,
        hidden: args.hidden.clone(),
        bn: args.bn,
        log_norm_site: NormSite::AfterLog,
        max_order: args.max_order,
        clamp_eps: afn_core::embedding::DEFAULT_CLAMP_EPS,
        init_scale: 1.0,
    };
    let spec = model_spec(kind, &arch)?;
    let schema = tiny_schema(args.fields, args.cardinality)?;
    let mut model = spec.build(&schema, args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x9e37_79b9_7f4a_7c15);
    for slot in model.named_tensors_mut() {
        if slot.name.contains("embed.") || slot.name.contains("linear.") || slot.name.ends_with("bias") {
            for x in slot.tensor.data_mut() {
                let mag: f64 = rng.random_range(0.2..1.0);
                *x = if rng.random::<bool>() { mag } else { -mag };
            }
        }
    }
    let rows: Vec<Instance> = (0..args.batch)
        .map(|i| {
            let values = schema
                .fields()
                .iter()
                .map(|f| Value::Category(rng.random_range(0..f.cardinality().unwrap_or(1))))
                .collect();
            Instance::new(i % 2 == 0, values)
        })
        .collect();
    let batch: Vec<&Instance> = rows.iter().collect();
    Ok(training::grad_check(&model, &batch, args.step)?)
}

fn check_tolerance(err: f64, tolerance: f64) -> AppResult<()> {
    if err.is_nan() || err > tolerance {
        return Err(AppError::Numeric(format!(
            "max relative gradient error {err} exceeds {tolerance}"
        )));
    }
    Ok(())
}

/// [`gradcheck_error`], failing when it exceeds the tolerance.
pub fn cmd_gradcheck(args: &GradcheckArgs) -> AppResult<f64> {
    let err = gradcheck_error(args)?;
    check_tolerance(err, args.tolerance)?;
    Ok(err)
}

#[derive(Debug, Clone)]
pub struct SynthReport {
    pub planted: crate::synth::Planted,
    pub files: Vec<PathBuf>,
    pub sidecar: PathBuf,
}

pub fn cmd_gen_synth(args: &GenSynthArgs) -> AppResult<SynthReport> {
    match args.pattern {
        Pattern::Cross3 => {}
    }
    let spec = Cross3 {
        fields: args.fields,
        cardinality: args.cardinality,
    };
    let mut g = Generator::new(spec, args.seed).map_err(AppError::Usage)?;
    let names = g.names();
    let mut outputs = vec![(args.out.clone(), args.rows)];
    if let Some(p) = &args.val_out {
        outputs.push((p.clone(), args.val_rows));
    }
    if let Some(p) = &args.test_out {
        outputs.push((p.clone(), args.test_rows));
    }
    let mut files = Vec::new();
    for (path, n) in outputs {
        let rows = g.rows(n);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| AppError::io(&path, e))?;
        tsv::write_categorical(BufWriter::new(file), &names, &rows)?;
        files.push(path);
    }
    let sidecar = appended(&args.out, ".planted.json");
    let json = serde_json::to_string_pretty(g.planted()).expect("planted serializes");
    checkpoint::write_text(&sidecar, &json)?;
    Ok(SynthReport {
        planted: g.planted().clone(),
        files,
        sidecar,
    })
}

fn print_model(r: &ModelReport) {
    println!(
        "model={} best_epoch={} best_step={} val_auc={} val_logloss={} checkpoint={}",
        r.kind.name(),
        r.best_epoch,
        r.best_step,
        r.best.auc,
        r.best.logloss,
        r.checkpoint.display()
    );
}

/// Runs a parsed command line, printing its report.
pub fn run(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Train(a) => {
            let r = cmd_train(&a)?;
            r.models.iter().for_each(print_model);
            if let Some(e) = r.ensemble {
                println!(
                    "ensemble w1={} w2={} b={} val_auc={} val_logloss={} checkpoint={}",
                    e.params.w1,
                    e.params.w2,
                    e.params.b,
                    e.val.auc,
                    e.val.logloss,
                    e.checkpoint.display()
                );
            }
        }
        Command::Evaluate(a) => {
            let m = cmd_evaluate(&a)?;
            println!("auc={} logloss={}", m.auc, m.logloss);
        }
        Command::Ensemble(a) => {
            let e = cmd_ensemble(&a)?;
            println!(
                "w1={} w2={} b={} auc={} logloss={}",
                e.params.w1, e.params.w2, e.params.b, e.val.auc, e.val.logloss
            );
        }
        Command::InspectOrders(a) => {
            let r = cmd_inspect(&a)?;
            println!(
                "snapshots={} fields_by_order={}",
                r.snapshots,
                r.fields_by_order.join(",")
            );
        }
        Command::Gradcheck(a) => {
            let err = gradcheck_error(&a)?;
            println!("max_rel_error={err}");
            check_tolerance(err, a.tolerance)?;
        }
        Command::GenSynth(a) => {
            let r = cmd_gen_synth(&a)?;
            println!(
                "planted_fields={} planted_values={}",
                r.planted.field_names.join(","),
                r.planted
                    .values
                    .iter()
                    .map(|v| format!("v{v}"))
                    .collect::<Vec<_>>()
                    .join(",")
            );
        }
    }
    Ok(())
}
