//! Cross-feature order introspection over logarithmic-layer weights.

use alloc::string::String;
use alloc::vec::Vec;

use crate::logtransform::{cross_feature_order, field_order_profile, LtlParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OrderRow {
    pub step: u64,
    pub neuron_id: usize,
    pub order: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub step: u64,
    pub field_id: usize,
    pub neuron_id: usize,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SnapshotTables {
    pub orders: Vec<OrderRow>,
    pub weights: Vec<WeightRow>,
}

/// Cross orders per neuron and raw weights per (field, neuron) for each
/// `(step, W)` snapshot.
pub fn snapshot_orders(snapshots: &[(u64, &LtlParams)]) -> Result<SnapshotTables> {
    let mut out = SnapshotTables::default();
    let shape = snapshots.first().map(|(_, p)| (p.num_fields(), p.num_neurons()));
    for &(step, params) in snapshots {
        if Some((params.num_fields(), params.num_neurons())) != shape {
            return Err(Error::InconsistentSnapshots);
        }
        for j in 0..params.num_neurons() {
            out.orders.push(OrderRow {
                step,
                neuron_id: j,
                order: cross_feature_order(params, j)?,
            });
        }
        for i in 0..params.num_fields() {
            for j in 0..params.num_neurons() {
                out.weights.push(WeightRow {
                    step,
                    field_id: i,
                    neuron_id: j,
                    w: params.weight(i, j),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedField {
    pub neuron_id: usize,
    /// 1-based.
    pub rank: usize,
    pub field_id: usize,
    pub field_name: String,
    pub abs_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudy {
    pub ranked: Vec<RankedField>,
    /// `(field_name, sum_j |w_ij|)` in field order.
    pub field_sums: Vec<(String, f64)>,
}

/// Fields of every neuron ranked by `|w_ij|` (descending, ties by field id),
/// keeping the first `top_k`, plus per-field order sums.
pub fn case_study(params: &LtlParams, field_names: &[String], top_k: usize) -> Result<CaseStudy> {
    if field_names.len() != params.num_fields() {
        return Err(Error::SchemaMismatch(alloc::format!(
            "{} field names for {} fields",
            field_names.len(),
            params.num_fields()
        )));
    }
    let profile = field_order_profile(params);
    let mut ranked = Vec::new();
    for j in 0..params.num_neurons() {
        let mut fields: Vec<usize> = (0..params.num_fields()).collect();
        fields.sort_by(|&a, &b| {
            profile
                .abs_weights
                .at(b, j)
                .total_cmp(&profile.abs_weights.at(a, j))
                .then(a.cmp(&b))
        });
        for (r, &i) in fields.iter().take(top_k).enumerate() {
            ranked.push(RankedField {
                neuron_id: j,
                rank: r + 1,
                field_id: i,
                field_name: field_names[i].clone(),
                abs_weight: profile.abs_weights.at(i, j),
            });
        }
    }
    let field_sums = field_names.iter().cloned().zip(profile.field_sums).collect();
    Ok(CaseStudy { ranked, field_sums })
}

/// Field ids ordered by `sum_j |w_ij|`, largest first (ties by field id).
pub fn fields_by_order_sum(params: &LtlParams) -> Vec<usize> {
    let sums = field_order_profile(params).field_sums;
    let mut ids: Vec<usize> = (0..sums.len()).collect();
    ids.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));
    ids
}
