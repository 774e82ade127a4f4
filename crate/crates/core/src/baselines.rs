//! Reference models: logistic regression, factorization machines,
//! brute-force higher-order factorization machines and a plain DNN over
//! concatenated embeddings.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use itertools::Itertools;
use rand::Rng;

use crate::data::{Instance, Schema};
use crate::embedding::EmbeddingTables;
use crate::model::{Model, Parameters, Role, Slot};
use crate::network::{Mlp, MlpCache, Mode, PredictionHead};
use crate::{Error, Result, Tensor};

/// One weight per categorical vocabulary entry and per numerical field,
/// plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weights: EmbeddingTables,
    pub bias: Tensor,
}

impl LinearParams {
    pub fn zeros(schema: &Schema) -> Self {
        Self {
            weights: EmbeddingTables::zeros(schema, 1),
            bias: Tensor::zeros(&[1]),
        }
    }

    fn check(&self, inst: &Instance) -> Result<()> {
        self.weights.check(inst)
    }

    fn value(&self, inst: &Instance) -> f64 {
        let mut w = vec![0.0; self.weights.num_fields()];
        self.weights.embed_into(inst, &mut w);
        self.bias.data()[0] + w.iter().sum::<f64>()
    }

    fn accumulate(&self, inst: &Instance, g: f64, grad: &mut LinearParams) {
        grad.bias.data_mut()[0] += g;
        grad.weights.scatter_add(inst, &vec![g; self.weights.num_fields()]);
    }
}

impl Parameters for LinearParams {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        for i in 0..self.weights.num_fields() {
            out.push(Slot::new(
                format!("{prefix}linear.{i}"),
                Role::Trainable,
                self.weights.table(i).tensor(),
            ));
        }
        out.push(Slot::new(format!("{prefix}bias"), Role::Trainable, &self.bias));
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        for (i, t) in self.weights.tables_mut().enumerate() {
            out.push(Slot::new(
                format!("{prefix}linear.{i}"),
                Role::Trainable,
                t.tensor_mut(),
            ));
        }
        out.push(Slot::new(format!("{prefix}bias"), Role::Trainable, &mut self.bias));
    }
}

/// `bias + sum of active weights` (numerical weights scaled by the value).
pub fn lr_forward(inst: &Instance, params: &LinearParams) -> Result<f64> {
    params.check(inst)?;
    Ok(params.value(inst))
}

/// `sum_{i<j} <e_i, e_j>` over the rows of an `m x k` embedding matrix.
pub fn fm_interactions(e: &Tensor) -> f64 {
    let (m, k) = (e.rows(), e.cols());
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let mut inner = 0.0;
            for d in 0..k {
                inner += e.at(i, d) * e.at(j, d);
            }
            total += inner;
        }
    }
    total
}

/// Sum over all field subsets of size `2..=n` of the summed element-wise
/// product of their embeddings. `ops` counts one multiply-add per
/// (subset, dimension).
pub fn hofm_interactions_counted(e: &Tensor, n: usize, ops: &mut u64) -> Result<f64> {
    let (m, k) = (e.rows(), e.cols());
    if n < 2 || n > m {
        return Err(Error::MaxOrder { order: n, fields: m });
    }
    let mut total = 0.0;
    for r in 2..=n {
        for subset in (0..m).combinations(r) {
            let mut inner = 0.0;
            for d in 0..k {
                let mut p = 1.0;
                for &i in &subset {
                    p *= e.at(i, d);
                }
                inner += p;
                *ops += 1;
            }
            total += inner;
        }
    }
    Ok(total)
}

pub fn hofm_interactions(e: &Tensor, n: usize) -> Result<f64> {
    hofm_interactions_counted(e, n, &mut 0)
}

/// Linear part plus all pairwise embedding inner products.
pub fn fm_forward(inst: &Instance, linear: &LinearParams, tables: &EmbeddingTables) -> Result<f64> {
    let lin = lr_forward(inst, linear)?;
    Ok(lin + fm_interactions(&tables.embed(inst)?))
}

/// Linear part plus all interactions of order `2..=max_order`.
pub fn hofm_forward(inst: &Instance, linear: &LinearParams, tables: &EmbeddingTables, max_order: usize) -> Result<f64> {
    let lin = lr_forward(inst, linear)?;
    Ok(lin + hofm_interactions(&tables.embed(inst)?, max_order)?)
}

/// MLP over the concatenated (unclamped) embeddings followed by the head.
/// Train mode on a single instance is only valid without batch norm.
pub fn dnn_forward(
    inst: &Instance,
    tables: &EmbeddingTables,
    mlp: &Mlp,
    head: &PredictionHead,
    mode: Mode,
) -> Result<f64> {
    let e = tables.embed(inst)?;
    let x = Tensor::from_vec(&[1, e.len()], e.into_vec())?;
    let (z, _) = mlp.forward(x, mode)?;
    if z.cols() != head.weight.len() {
        return Err(Error::Shape(format!(
            "head expects {} inputs, got {}",
            head.weight.len(),
            z.cols()
        )));
    }
    Ok(head.logits(&z)[0])
}

fn check_dlogits(batch: &[&Instance], dlogits: &[f64]) -> Result<()> {
    if batch.len() != dlogits.len() {
        return Err(Error::Shape(format!(
            "{} upstream gradients for a batch of {}",
            dlogits.len(),
            batch.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lr {
    pub linear: LinearParams,
}

impl Lr {
    pub fn new(schema: &Schema) -> Self {
        Self {
            linear: LinearParams::zeros(schema),
        }
    }
}

impl Parameters for Lr {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        self.linear.slots(prefix, out);
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        self.linear.slots_mut(prefix, out);
    }
}

impl Model for Lr {
    type Cache = ();

    fn forward_train(&self, batch: &[&Instance]) -> Result<(Vec<f64>, ())> {
        Ok((self.predict_batch(batch)?, ()))
    }

    fn backward(&self, batch: &[&Instance], _: &(), dlogits: &[f64]) -> Result<Self> {
        check_dlogits(batch, dlogits)?;
        let mut grad = self.zeros_like();
        for (inst, &g) in batch.iter().zip(dlogits) {
            self.linear.check(inst)?;
            self.linear.accumulate(inst, g, &mut grad.linear);
        }
        Ok(grad)
    }

    fn predict_batch(&self, batch: &[&Instance]) -> Result<Vec<f64>> {
        batch.iter().map(|inst| lr_forward(inst, &self.linear)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fm {
    pub linear: LinearParams,
    pub embeddings: EmbeddingTables,
}

impl Fm {
    pub fn new<R: Rng + ?Sized>(schema: &Schema, dim: usize, init_scale: f64, rng: &mut R) -> Self {
        Self {
            linear: LinearParams::zeros(schema),
            embeddings: EmbeddingTables::uniform(schema, dim, init_scale, rng),
        }
    }
}

impl Parameters for Fm {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        self.linear.slots(prefix, out);
        self.embeddings.slots(prefix, out);
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        self.linear.slots_mut(prefix, out);
        self.embeddings.slots_mut(prefix, out);
    }
}

impl Model for Fm {
    type Cache = ();

    fn forward_train(&self, batch: &[&Instance]) -> Result<(Vec<f64>, ())> {
        Ok((self.predict_batch(batch)?, ()))
    }

    fn backward(&self, batch: &[&Instance], _: &(), dlogits: &[f64]) -> Result<Self> {
        check_dlogits(batch, dlogits)?;
        let mut grad = self.zeros_like();
        let k = self.embeddings.dim();
        for (inst, &g) in batch.iter().zip(dlogits) {
            let e = self.embeddings.embed(inst)?;
            self.linear.accumulate(inst, g, &mut grad.linear);
            let mut total = vec![0.0; k];
            for i in 0..e.rows() {
                for (t, x) in total.iter_mut().zip(e.row(i)) {
                    *t += x;
                }
            }
            let mut d = e.clone();
            for i in 0..e.rows() {
                for (dd, (t, x)) in d.row_mut(i).iter_mut().zip(total.iter().zip(e.row(i))) {
                    *dd = g * (t - x);
                }
            }
            grad.embeddings.scatter_add(inst, d.data());
        }
        Ok(grad)
    }

    fn predict_batch(&self, batch: &[&Instance]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|inst| fm_forward(inst, &self.linear, &self.embeddings))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hofm {
    pub linear: LinearParams,
    pub embeddings: EmbeddingTables,
    pub max_order: usize,
}

impl Hofm {
    pub fn new<R: Rng + ?Sized>(
        schema: &Schema,
        dim: usize,
        max_order: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if max_order < 2 || max_order > schema.len() {
            return Err(Error::MaxOrder {
                order: max_order,
                fields: schema.len(),
            });
        }
        Ok(Self {
            linear: LinearParams::zeros(schema),
            embeddings: EmbeddingTables::uniform(schema, dim, init_scale, rng),
            max_order,
        })
    }
}

impl Parameters for Hofm {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        self.linear.slots(prefix, out);
        self.embeddings.slots(prefix, out);
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        self.linear.slots_mut(prefix, out);
        self.embeddings.slots_mut(prefix, out);
    }
}

impl Model for Hofm {
    type Cache = ();

    fn forward_train(&self, batch: &[&Instance]) -> Result<(Vec<f64>, ())> {
        Ok((self.predict_batch(batch)?, ()))
    }

    fn backward(&self, batch: &[&Instance], _: &(), dlogits: &[f64]) -> Result<Self> {
        check_dlogits(batch, dlogits)?;
        let mut grad = self.zeros_like();
        let m = self.embeddings.num_fields();
        let k = self.embeddings.dim();
        for (inst, &g) in batch.iter().zip(dlogits) {
            let e = self.embeddings.embed(inst)?;
            self.linear.accumulate(inst, g, &mut grad.linear);
            let mut d = Tensor::zeros(&[m, k]);
            for r in 2..=self.max_order {
                for subset in (0..m).combinations(r) {
                    for &i in &subset {
                        for dim in 0..k {
                            let mut p = g;
                            for &j in &subset {
                                if j != i {
                                    p *= e.at(j, dim);
                                }
                            }
                            d.row_mut(i)[dim] += p;
                        }
                    }
                }
            }
            grad.embeddings.scatter_add(inst, d.data());
        }
        Ok(grad)
    }

    fn predict_batch(&self, batch: &[&Instance]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|inst| hofm_forward(inst, &self.linear, &self.embeddings, self.max_order))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dnn {
    pub embeddings: EmbeddingTables,
    pub mlp: Mlp,
    pub head: PredictionHead,
}

pub struct DnnCache {
    mlp: MlpCache,
    z: Tensor,
}

impl Dnn {
    pub fn new<R: Rng + ?Sized>(
        schema: &Schema,
        dim: usize,
        hidden: &[usize],
        norm: Option<(f64, f64)>,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let embeddings = EmbeddingTables::uniform(schema, dim, init_scale, rng);
        let input = schema.len() * dim;
        let mlp = Mlp::new(input, hidden, norm, rng);
        let head = PredictionHead::he_uniform(mlp.output_dim(input), rng);
        Self { embeddings, mlp, head }
    }

    fn forward(&self, batch: &[&Instance], mode: Mode) -> Result<(Vec<f64>, DnnCache)> {
        let width = self.embeddings.num_fields() * self.embeddings.dim();
        let mut x = Tensor::zeros(&[batch.len(), width]);
        for (r, inst) in batch.iter().enumerate() {
            self.embeddings.check(inst)?;
            self.embeddings.embed_into(inst, x.row_mut(r));
        }
        let (z, mlp) = self.mlp.forward(x, mode)?;
        Ok((self.head.logits(&z), DnnCache { mlp, z }))
    }
}

impl Parameters for Dnn {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        self.embeddings.slots(prefix, out);
        self.mlp.slots_at(prefix, out);
        self.head.slots_at(prefix, out);
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        self.embeddings.slots_mut(prefix, out);
        self.mlp.slots_mut_at(prefix, out);
        self.head.slots_mut_at(prefix, out);
    }
}

impl Model for Dnn {
    type Cache = DnnCache;

    fn forward_train(&self, batch: &[&Instance]) -> Result<(Vec<f64>, DnnCache)> {
        self.forward(batch, Mode::Train)
    }

    fn backward(&self, batch: &[&Instance], c: &DnnCache, dlogits: &[f64]) -> Result<Self> {
        check_dlogits(batch, dlogits)?;
        let mut grad = self.zeros_like();
        let dz = self.head.backward(&c.z, dlogits, &mut grad.head);
        let dx = self.mlp.backward(&c.mlp, dz, &mut grad.mlp);
        for (r, inst) in batch.iter().enumerate() {
            grad.embeddings.scatter_add(inst, dx.row(r));
        }
        Ok(grad)
    }

    fn commit(&mut self, c: &DnnCache) {
        self.mlp.commit(&c.mlp);
    }

    fn predict_batch(&self, batch: &[&Instance]) -> Result<Vec<f64>> {
        Ok(self.forward(batch, Mode::Infer)?.0)
    }

    fn uses_batch_statistics(&self) -> bool {
        self.mlp.uses_batch_statistics()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FieldSchema, Value, Vocabulary};
    use crate::embedding::FieldTable;
    use proptest::prelude::*;

    fn schema() -> Schema {
        Schema::new(vec![
            FieldSchema::categorical(0, "a", Vocabulary::from_tokens(["x", "y"])),
            FieldSchema::numerical(1, "b"),
        ])
        .unwrap()
    }

    #[test]
    fn lr_examples() {
        let s = schema();
        let mut p = LinearParams::zeros(&s);
        p.bias.data_mut()[0] = 0.3;
        let inst = Instance::new(true, vec![Value::Category(1), Value::Number(2.0)]);
        assert_eq!(lr_forward(&inst, &p).unwrap(), 0.3);
        p.bias.data_mut()[0] = 0.0;
        if let FieldTable::Categorical(t) = p.weights.table_mut(0) {
            t.set(1, 0, 1.5);
        }
        assert_eq!(lr_forward(&inst, &p).unwrap(), 1.5);
        if let FieldTable::Categorical(t) = p.weights.table_mut(0) {
            t.set(1, 0, 0.0);
        }
        p.weights.table_mut(1).tensor_mut().data_mut()[0] = 0.25;
        assert_eq!(lr_forward(&inst, &p).unwrap(), 0.5);
    }

    #[test]
    fn fm_examples() {
        let e = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(fm_interactions(&e), 11.0);
        assert_eq!(fm_interactions(&Tensor::from_rows(&[&[5.0, 6.0]]).unwrap()), 0.0);
        let z = Tensor::from_rows(&[&[0.0, 0.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(fm_interactions(&z), 0.0);
    }

    #[test]
    fn hofm_examples() {
        let e = Tensor::from_rows(&[&[2.0], &[3.0], &[4.0]]).unwrap();
        assert_eq!(hofm_interactions(&e, 3).unwrap(), 50.0);
        let z = Tensor::from_rows(&[&[2.0], &[0.0], &[4.0]]).unwrap();
        assert_eq!(hofm_interactions(&z, 3).unwrap(), hofm_interactions(&z, 2).unwrap());
        assert!(matches!(hofm_interactions(&e, 1), Err(Error::MaxOrder { .. })));
        assert!(hofm_interactions(&e, 4).is_err());
    }

    #[test]
    fn hofm_operation_count() {
        for (m, k, n) in [(4usize, 2usize, 2usize), (5, 3, 3), (6, 1, 4), (6, 4, 6)] {
            let e = Tensor::filled(&[m, k], 0.5);
            let mut ops = 0;
            hofm_interactions_counted(&e, n, &mut ops).unwrap();
            let expected: u64 = (2..=n).map(|r| binomial(m, r) * k as u64).sum();
            assert_eq!(ops, expected);
        }
    }

    fn binomial(n: usize, r: usize) -> u64 {
        (0..r).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1))
    }

    #[test]
    fn dnn_constant_head() {
        let s = schema();
        let tables = EmbeddingTables::zeros(&s, 2);
        let mlp = Mlp::from_layers(vec![], vec![]).unwrap();
        let head = PredictionHead::new(vec![0.0; 4], 0.4);
        let inst = Instance::new(true, vec![Value::Category(1), Value::Number(2.0)]);
        assert_eq!(dnn_forward(&inst, &tables, &mlp, &head, Mode::Infer).unwrap(), 0.4);
        let bad = PredictionHead::new(vec![0.0; 3], 0.4);
        assert!(dnn_forward(&inst, &tables, &mlp, &bad, Mode::Infer).is_err());
    }

    fn matrix(m: usize, k: usize) -> impl Strategy<Value = Tensor> {
        proptest::collection::vec(-2.0f64..2.0, m * k).prop_map(move |v| Tensor::from_vec(&[m, k], v).unwrap())
    }

    proptest! {
        #[test]
        fn hofm_order_two_is_fm((e, _) in (2usize..7, 1usize..5).prop_flat_map(|(m, k)| (matrix(m, k), Just(())))) {
            prop_assert_eq!(hofm_interactions(&e, 2).unwrap().to_bits(), fm_interactions(&e).to_bits());
        }

        #[test]
        fn fm_is_permutation_symmetric(e in matrix(5, 3), perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle()) {
            let rows: Vec<&[f64]> = perm.iter().map(|&i| e.row(i)).collect();
            let p = Tensor::from_rows(&rows).unwrap();
            prop_assert!((fm_interactions(&p) - fm_interactions(&e)).abs() <= 1e-12);
        }
    }
}
