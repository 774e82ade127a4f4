//! CSV outputs: training logs, evaluation rows and order analysis tables.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;

use afn_core::analysis::{CaseStudy, SnapshotTables};
use afn_core::logtransform::{cross_feature_order, field_order_profile, LtlParams};
use afn_core::training::{EpochMetrics, Metrics};
use serde::Serialize;

use crate::error::{AppError, AppResult};

fn create(path: &Path) -> AppResult<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    File::create(path).map_err(|e| AppError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> AppError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => AppError::io(path, io),
        other => AppError::Data(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `rows` with a header derived from the row type.
fn write_rows<W: Write, T: Serialize>(out: W, path: &Path, rows: impl IntoIterator<Item = T>) -> AppResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

fn write_file<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> AppResult<()> {
    write_rows(create(path)?, path, rows)
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    train_logloss: f64,
    val_auc: f64,
    val_logloss: f64,
}

pub fn write_metrics(path: &Path, log: &[EpochMetrics]) -> AppResult<()> {
    write_file(
        path,
        log.iter().map(|e| EpochRow {
            epoch: e.epoch,
            train_logloss: e.train_logloss,
            val_auc: e.val_auc,
            val_logloss: e.val_logloss,
        }),
    )
}

#[derive(Serialize)]
struct EvalRow<'a> {
    checkpoint: &'a str,
    data: &'a str,
    auc: f64,
    logloss: f64,
}

/// Appends one `checkpoint,data,auc,logloss` row, writing the header when
/// the file is new or empty.
pub fn append_evaluation(path: &Path, checkpoint: &str, data: &str, m: &Metrics) -> AppResult<()> {
    let fresh = fs::metadata(path).map(|md| md.len() == 0).unwrap_or(true);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| AppError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(EvalRow {
        checkpoint,
        data,
        auc: m.auc,
        logloss: m.logloss,
    })
    .map_err(|e| csv_err(path, e))?;
    w.flush().map_err(|e| AppError::io(path, e))
}

#[derive(Serialize)]
struct OrderCsv {
    step: u64,
    neuron_id: usize,
    order: f64,
}

#[derive(Serialize)]
struct WeightCsv {
    step: u64,
    field_id: usize,
    neuron_id: usize,
    w: f64,
}

#[derive(Serialize)]
struct CaseCsv<'a> {
    neuron_id: usize,
    rank: usize,
    field_name: &'a str,
    abs_weight: f64,
}

#[derive(Serialize)]
struct FieldSumCsv<'a> {
    field_name: &'a str,
    total_abs_weight: f64,
}

#[derive(Serialize)]
struct AbsWeightCsv {
    neuron_id: usize,
    field_id: usize,
    abs_weight: f64,
}

#[derive(Serialize)]
struct NeuronOrderCsv {
    neuron_id: usize,
    order: f64,
}

pub const ORDERS_CSV: &str = "orders.csv";
pub const WEIGHTS_CSV: &str = "weights.csv";
pub const CASE_STUDY_CSV: &str = "case_study.csv";
pub const FIELD_SUMS_CSV: &str = "field_sums.csv";
pub const PROFILE_WEIGHTS_CSV: &str = "profile_weights.csv";
pub const PROFILE_ORDERS_CSV: &str = "profile_orders.csv";

pub fn write_snapshots(dir: &Path, t: &SnapshotTables) -> AppResult<()> {
    write_file(
        &dir.join(ORDERS_CSV),
        t.orders.iter().map(|r| OrderCsv {
            step: r.step,
            neuron_id: r.neuron_id,
            order: r.order,
        }),
    )?;
    write_file(
        &dir.join(WEIGHTS_CSV),
        t.weights.iter().map(|r| WeightCsv {
            step: r.step,
            field_id: r.field_id,
            neuron_id: r.neuron_id,
            w: r.w,
        }),
    )
}

pub fn write_case_study(dir: &Path, cs: &CaseStudy) -> AppResult<()> {
    write_file(
        &dir.join(CASE_STUDY_CSV),
        cs.ranked.iter().map(|r| CaseCsv {
            neuron_id: r.neuron_id,
            rank: r.rank,
            field_name: &r.field_name,
            abs_weight: r.abs_weight,
        }),
    )?;
    write_file(
        &dir.join(FIELD_SUMS_CSV),
        cs.field_sums.iter().map(|(name, total)| FieldSumCsv {
            field_name: name,
            total_abs_weight: *total,
        }),
    )
}

/// `neuron_id,field_id,abs_weight` and `neuron_id,order` for one layer.
pub fn write_order_profile(dir: &Path, params: &LtlParams) -> AppResult<()> {
    let profile = field_order_profile(params);
    let (m, n) = (params.num_fields(), params.num_neurons());
    write_file(
        &dir.join(PROFILE_WEIGHTS_CSV),
        (0..n).flat_map(|j| {
            let a = &profile.abs_weights;
            (0..m).map(move |i| AbsWeightCsv {
                neuron_id: j,
                field_id: i,
                abs_weight: a.at(i, j),
            })
        }),
    )?;
    let orders = (0..n)
        .map(|j| {
            Ok(NeuronOrderCsv {
                neuron_id: j,
                order: cross_feature_order(params, j)?,
            })
        })
        .collect::<AppResult<Vec<_>>>()?;
    write_file(&dir.join(PROFILE_ORDERS_CSV), orders)
}
