//! Field embeddings and the positivity clamp in front of the logarithmic layer.
//!
//! A categorical field `i` owns a `cardinality x k` matrix and selects one row
//! per instance; a numerical field `j` owns one length-`k` vector scaled by the
//! raw value. The clamp maps each entry to `max(|e|, eps)` in the forward pass
//! only; the stored parameters stay unconstrained.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{FieldKind, Instance, Schema, Value};
use crate::model::{Parameters, Role, Slot};
use crate::{Error, Result, Tensor};

/// Floor applied by [`positive_clamp`] unless configured otherwise.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

/// Half-width of the uniform initializer at scale 1.
pub const INIT_RANGE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub enum FieldTable {
    /// `cardinality x k`
    Categorical(Tensor),
    /// `[k]`
    Numerical(Tensor),
}

impl FieldTable {
    pub fn tensor(&self) -> &Tensor {
        match self {
            FieldTable::Categorical(t) | FieldTable::Numerical(t) => t,
        }
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        match self {
            FieldTable::Categorical(t) | FieldTable::Numerical(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    dim: usize,
    tables: Vec<FieldTable>,
}

impl EmbeddingTables {
    pub fn zeros(schema: &Schema, dim: usize) -> Self {
        let tables = schema
            .fields()
            .iter()
            .map(|f| match f.kind {
                FieldKind::Categorical => FieldTable::Categorical(Tensor::zeros(&[f.vocab.cardinality(), dim])),
                FieldKind::Numerical => FieldTable::Numerical(Tensor::zeros(&[dim])),
            })
            .collect();
        Self { dim, tables }
    }

    /// Entries i.i.d. uniform in `[-0.01 * scale, 0.01 * scale]`.
    pub fn uniform<R: Rng + ?Sized>(schema: &Schema, dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(schema, dim);
        let half = INIT_RANGE * scale;
        for table in &mut t.tables {
            for x in table.tensor_mut().data_mut() {
                *x = (2.0 * rng.random::<f64>() - 1.0) * half;
            }
        }
        t
    }

    pub fn from_tables(dim: usize, tables: Vec<FieldTable>) -> Result<Self> {
        for (i, t) in tables.iter().enumerate() {
            let ok = match t {
                FieldTable::Categorical(m) => m.shape().len() == 2 && m.cols() == dim && m.rows() >= 1,
                FieldTable::Numerical(v) => v.shape() == [dim],
            };
            if !ok {
                return Err(Error::Shape(format!(
                    "embedding table {} has shape {:?}, embed dim {}",
                    i,
                    t.tensor().shape(),
                    dim
                )));
            }
        }
        Ok(Self { dim, tables })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_fields(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, field: usize) -> &FieldTable {
        &self.tables[field]
    }

    pub fn table_mut(&mut self, field: usize) -> &mut FieldTable {
        &mut self.tables[field]
    }

    pub fn tables_mut(&mut self) -> impl Iterator<Item = &mut FieldTable> {
        self.tables.iter_mut()
    }

    /// Raw (unclamped) embeddings of `inst` as an `m x k` matrix.
    pub fn embed(&self, inst: &Instance) -> Result<Tensor> {
        self.check(inst)?;
        let mut out = Tensor::zeros(&[self.tables.len(), self.dim]);
        self.embed_into(inst, out.data_mut());
        Ok(out)
    }

    pub(crate) fn check(&self, inst: &Instance) -> Result<()> {
        if inst.values.len() != self.tables.len() {
            return Err(Error::SchemaMismatch(format!(
                "expected {} values, got {}",
                self.tables.len(),
                inst.values.len()
            )));
        }
        for (field, (table, value)) in self.tables.iter().zip(&inst.values).enumerate() {
            match (table, *value) {
                (FieldTable::Categorical(m), Value::Category(c)) => {
                    if c >= m.rows() {
                        return Err(Error::CategoryOutOfRange {
                            field,
                            index: c,
                            cardinality: m.rows(),
                        });
                    }
                }
                (FieldTable::Numerical(_), Value::Number(_)) => {}
                _ => {
                    return Err(Error::SchemaMismatch(format!(
                        "field {} has the wrong value kind",
                        field
                    )))
                }
            }
        }
        Ok(())
    }

    /// Writes the `m * k` raw embedding of a validated instance into `out`.
    pub(crate) fn embed_into(&self, inst: &Instance, out: &mut [f64]) {
        let k = self.dim;
        for (field, (table, value)) in self.tables.iter().zip(&inst.values).enumerate() {
            let dst = &mut out[field * k..(field + 1) * k];
            match (table, *value) {
                (FieldTable::Categorical(m), Value::Category(c)) => dst.copy_from_slice(m.row(c)),
                (FieldTable::Numerical(v), Value::Number(x)) => {
                    for (d, s) in dst.iter_mut().zip(v.data()) {
                        *d = s * x;
                    }
                }
                _ => unreachable!("instance validated against tables"),
            }
        }
    }

    /// Accumulates the gradient with respect to the raw embedding of `inst`
    /// (`m * k` values) into these tables.
    pub(crate) fn scatter_add(&mut self, inst: &Instance, d_raw: &[f64]) {
        let k = self.dim;
        for (field, (table, value)) in self.tables.iter_mut().zip(&inst.values).enumerate() {
            let src = &d_raw[field * k..(field + 1) * k];
            match (table, *value) {
                (FieldTable::Categorical(m), Value::Category(c)) => {
                    for (g, s) in m.row_mut(c).iter_mut().zip(src) {
                        *g += s;
                    }
                }
                (FieldTable::Numerical(v), Value::Number(x)) => {
                    for (g, s) in v.data_mut().iter_mut().zip(src) {
                        *g += s * x;
                    }
                }
                _ => unreachable!("instance validated against tables"),
            }
        }
    }

    /// Adds a sparse gradient into these tables.
    pub fn add_sparse(&mut self, grad: &SparseGrad) -> Result<()> {
        for r in &grad.rows {
            let table = self.tables.get_mut(r.field).ok_or(Error::IndexOutOfRange {
                index: r.field,
                len: grad.rows.len(),
            })?;
            let dst = match table {
                FieldTable::Categorical(m) => m.row_mut(r.row),
                FieldTable::Numerical(v) => v.data_mut(),
            };
            for (g, s) in dst.iter_mut().zip(&r.grad) {
                *g += s;
            }
        }
        Ok(())
    }
}

impl Parameters for EmbeddingTables {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        for (i, t) in self.tables.iter().enumerate() {
            out.push(Slot::new(table_name(prefix, i, t), Role::Trainable, t.tensor()));
        }
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        for (i, t) in self.tables.iter_mut().enumerate() {
            let name = table_name(prefix, i, t);
            out.push(Slot::new(name, Role::Trainable, t.tensor_mut()));
        }
    }
}

fn table_name(prefix: &str, field: usize, t: &FieldTable) -> String {
    match t {
        FieldTable::Categorical(_) => format!("{prefix}embed.cat.{field}"),
        FieldTable::Numerical(_) => format!("{prefix}embed.num.{field}"),
    }
}

/// `max(|e|, eps)` element-wise.
pub fn positive_clamp(e: &Tensor, eps: f64) -> Tensor {
    let mut out = e.clone();
    clamp_in_place(out.data_mut(), eps);
    out
}

pub(crate) fn clamp_in_place(x: &mut [f64], eps: f64) {
    for v in x {
        *v = libm::fabs(*v).max(eps);
    }
}

/// Pulls `upstream` (gradient w.r.t. the clamped values) back to the raw
/// values: `sign(raw)` where `|raw| > eps`, zero where the floor is active.
pub fn clamp_backward(raw: &[f64], upstream: &[f64], eps: f64, out: &mut [f64]) {
    for ((o, &r), &g) in out.iter_mut().zip(raw).zip(upstream) {
        *o = if libm::fabs(r) > eps {
            if r > 0.0 {
                g
            } else {
                -g
            }
        } else {
            0.0
        };
    }
}

/// Gradient on one embedding row (categorical) or vector (numerical, `row == 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub field: usize,
    pub row: usize,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseGrad {
    pub rows: Vec<SparseRow>,
}

/// Reverse pass of [`EmbeddingTables::embed`], optionally through the clamp.
///
/// `upstream` is the `m x k` gradient with respect to the embedding output
/// (the clamped output when `clamp_eps` is set).
pub fn embed_backward(
    inst: &Instance,
    tables: &EmbeddingTables,
    upstream: &Tensor,
    clamp_eps: Option<f64>,
) -> Result<SparseGrad> {
    tables.check(inst)?;
    let (m, k) = (tables.num_fields(), tables.dim());
    if upstream.shape() != [m, k] {
        return Err(Error::Shape(format!(
            "upstream gradient {:?}, expected [{}, {}]",
            upstream.shape(),
            m,
            k
        )));
    }
    let mut d_raw = upstream.data().to_vec();
    if let Some(eps) = clamp_eps {
        let mut raw = vec![0.0; m * k];
        tables.embed_into(inst, &mut raw);
        clamp_backward(&raw, upstream.data(), eps, &mut d_raw);
    }
    let rows = inst
        .values
        .iter()
        .enumerate()
        .map(|(field, v)| {
            let src = &d_raw[field * k..(field + 1) * k];
            match *v {
                Value::Category(c) => SparseRow {
                    field,
                    row: c,
                    grad: src.to_vec(),
                },
                Value::Number(x) => SparseRow {
                    field,
                    row: 0,
                    grad: src.iter().map(|g| g * x).collect(),
                },
            }
        })
        .collect();
    Ok(SparseGrad { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FieldSchema, Vocabulary};
    use alloc::vec;
    use proptest::prelude::*;

    fn schema() -> Schema {
        Schema::new(vec![
            FieldSchema::categorical(0, "brand", Vocabulary::from_tokens(["a", "b"])),
            FieldSchema::numerical(1, "age"),
        ])
        .unwrap()
    }

    fn tables() -> EmbeddingTables {
        EmbeddingTables::from_tables(
            2,
            vec![
                FieldTable::Categorical(Tensor::from_rows(&[&[0.0, 0.0], &[0.5, -0.25], &[1.0, 2.0]]).unwrap()),
                FieldTable::Numerical(Tensor::from_vec(&[2], vec![0.1, 0.2]).unwrap()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn categorical_selects_row_and_numerical_scales() {
        let inst = Instance::new(true, vec![Value::Category(2), Value::Number(2.0)]);
        let e = tables().embed(&inst).unwrap();
        assert_eq!(e.row(0), &[1.0, 2.0]);
        assert!((e.row(1)[0] - 0.2).abs() < 1e-15 && (e.row(1)[1] - 0.4).abs() < 1e-15);

        let zero = Instance::new(true, vec![Value::Category(1), Value::Number(0.0)]);
        assert_eq!(tables().embed(&zero).unwrap().row(1), &[0.0, 0.0]);
    }

    #[test]
    fn embed_rejects_out_of_range_category() {
        let inst = Instance::new(true, vec![Value::Category(3), Value::Number(1.0)]);
        assert!(matches!(
            tables().embed(&inst),
            Err(Error::CategoryOutOfRange { field: 0, index: 3, .. })
        ));
    }

    #[test]
    fn clamp_examples() {
        let e = Tensor::from_rows(&[&[-0.3, 0.0]]).unwrap();
        assert_eq!(positive_clamp(&e, 1e-7).data(), &[0.3, 1e-7]);
        let pos = Tensor::from_rows(&[&[0.5, 2.0]]).unwrap();
        assert_eq!(positive_clamp(&pos, 1e-7), pos);
        let tiny = Tensor::from_rows(&[&[-1e-9]]).unwrap();
        assert_eq!(positive_clamp(&tiny, 1e-7).data(), &[1e-7]);
    }

    #[test]
    fn backward_scales_numerical_by_value() {
        let inst = Instance::new(true, vec![Value::Category(2), Value::Number(2.0)]);
        let up = Tensor::filled(&[2, 2], 1.0);
        let g = embed_backward(&inst, &tables(), &up, Some(1e-7)).unwrap();
        assert_eq!(
            g.rows[1],
            SparseRow {
                field: 1,
                row: 0,
                grad: vec![2.0, 2.0]
            }
        );
        assert_eq!(
            g.rows[0],
            SparseRow {
                field: 0,
                row: 2,
                grad: vec![1.0, 1.0]
            }
        );
    }

    #[test]
    fn backward_zero_where_clamped_and_sign_elsewhere() {
        // row 1 of the categorical table is [0.5, -0.25]; row 0 is all zeros.
        let up = Tensor::filled(&[2, 2], 1.0);
        let neg = Instance::new(true, vec![Value::Category(1), Value::Number(1.0)]);
        let g = embed_backward(&neg, &tables(), &up, Some(1e-7)).unwrap();
        assert_eq!(g.rows[0].grad, vec![1.0, -1.0]);
        let oov = Instance::new(true, vec![Value::Category(0), Value::Number(1.0)]);
        let g = embed_backward(&oov, &tables(), &up, Some(1e-7)).unwrap();
        assert_eq!(g.rows[0].grad, vec![0.0, 0.0]);
    }

    #[test]
    fn categorical_gradient_touches_only_selected_row() {
        let inst = Instance::new(true, vec![Value::Category(1), Value::Number(1.0)]);
        let up = Tensor::filled(&[2, 2], 1.0);
        let g = embed_backward(&inst, &tables(), &up, None).unwrap();
        let mut dense = EmbeddingTables::zeros(&schema(), 2);
        dense.add_sparse(&g).unwrap();
        match dense.table(0) {
            FieldTable::Categorical(m) => {
                assert_eq!(m.row(0), &[0.0, 0.0]);
                assert_eq!(m.row(1), &[1.0, 1.0]);
                assert_eq!(m.row(2), &[0.0, 0.0]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn finite_differences_away_from_clamp_boundary() {
        // f(V) = sum(c .* clamp(embed(x; V))) for a fixed random c.
        let inst = Instance::new(true, vec![Value::Category(2), Value::Number(1.7)]);
        let mut t = tables();
        if let FieldTable::Numerical(v) = t.table_mut(1) {
            v.data_mut().copy_from_slice(&[0.3, -0.6]);
        }
        let coef = [0.7, -1.3, 0.4, 2.1];
        let f = |t: &EmbeddingTables| -> f64 {
            let e = positive_clamp(&t.embed(&inst).unwrap(), 1e-7);
            e.data().iter().zip(coef).map(|(a, b)| a * b).sum()
        };
        let up = Tensor::from_vec(&[2, 2], coef.to_vec()).unwrap();
        let mut analytic = EmbeddingTables::zeros(&schema(), 2);
        analytic
            .add_sparse(&embed_backward(&inst, &t, &up, Some(1e-7)).unwrap())
            .unwrap();
        let h = 1e-5;
        let slots_len = t.named_tensors().len();
        for s in 0..slots_len {
            let n = t.named_tensors()[s].tensor.len();
            for i in 0..n {
                let mut plus = t.clone();
                plus.named_tensors_mut()[s].tensor.data_mut()[i] += h;
                let mut minus = t.clone();
                minus.named_tensors_mut()[s].tensor.data_mut()[i] -= h;
                let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
                let a = analytic.named_tensors()[s].tensor.data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
                assert!(
                    rel <= 1e-4 || (a == 0.0 && numeric.abs() < 1e-9),
                    "{s}/{i}: {a} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn tensor_names_follow_checkpoint_convention() {
        let names: Vec<String> = tables().named_tensors().into_iter().map(|s| s.name).collect();
        assert_eq!(names, vec!["embed.cat.0", "embed.num.1"]);
    }

    proptest! {
        #[test]
        fn clamp_output_is_at_least_eps(
            data in proptest::collection::vec(-10.0f64..10.0, 1..40),
            eps in 1e-9f64..1e-3,
        ) {
            let n = data.len();
            let e = Tensor::from_vec(&[1, n], data).unwrap();
            let c = positive_clamp(&e, eps);
            prop_assert!(c.data().iter().all(|&x| x >= eps));
        }

        #[test]
        fn numerical_embedding_is_linear(x in -5.0f64..5.0, alpha in -3.0f64..3.0) {
            let t = tables();
            let a = t.embed(&Instance::new(false, vec![Value::Category(1), Value::Number(alpha * x)])).unwrap();
            let b = t.embed(&Instance::new(false, vec![Value::Category(1), Value::Number(x)])).unwrap();
            for (p, q) in a.row(1).iter().zip(b.row(1)) {
                prop_assert!((p - alpha * q).abs() <= 1e-12 * (1.0 + q.abs()));
            }
        }
    }
}
