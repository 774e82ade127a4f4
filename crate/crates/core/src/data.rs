//! Field schema, labeled instances, deterministic splitting and batching.
//!
//! Categorical vocabularies reserve index 0 for tokens that were not seen
//! when the schema was fitted, so a field with `t` observed tokens has
//! cardinality `t + 1`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Reserved vocabulary slot for unseen categorical tokens.
pub const OOV_INDEX: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Categorical,
    Numerical,
}

impl FieldKind {
    /// One-letter code used in dataset headers.
    pub fn code(self) -> char {
        match self {
            FieldKind::Categorical => 'C',
            FieldKind::Numerical => 'N',
        }
    }
}

/// Token vocabulary of one categorical field, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for t in tokens {
            v.observe(t.as_ref());
        }
        v
    }

    /// Adds `token` if unseen and returns its index.
    pub fn observe(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.tokens.push(token.to_string());
        let i = self.tokens.len();
        self.index.insert(token.to_string(), i);
        i
    }

    /// Index of `token`, or [`OOV_INDEX`] when unseen.
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV_INDEX)
    }

    /// Token at `index`; `None` for the OOV slot.
    pub fn token(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.tokens.get(i))
            .map(String::as_str)
    }

    /// Observed tokens, excluding the reserved slot.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn cardinality(&self) -> usize {
        self.tokens.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSchema {
    pub field_id: usize,
    pub name: String,
    pub kind: FieldKind,
    pub vocab: Vocabulary,
}

impl FieldSchema {
    pub fn categorical(field_id: usize, name: &str, vocab: Vocabulary) -> Self {
        Self {
            field_id,
            name: name.to_string(),
            kind: FieldKind::Categorical,
            vocab,
        }
    }

    pub fn numerical(field_id: usize, name: &str) -> Self {
        Self {
            field_id,
            name: name.to_string(),
            kind: FieldKind::Numerical,
            vocab: Vocabulary::new(),
        }
    }

    /// Vocabulary size including the OOV slot; `None` for numerical fields.
    pub fn cardinality(&self) -> Option<usize> {
        match self.kind {
            FieldKind::Categorical => Some(self.vocab.cardinality()),
            FieldKind::Numerical => None,
        }
    }
}

/// Ordered list of fields with contiguous ids `0..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    fields: Vec<FieldSchema>,
}

impl Schema {
    pub fn new(fields: Vec<FieldSchema>) -> Result<Self> {
        for (i, f) in fields.iter().enumerate() {
            if f.field_id != i {
                return Err(Error::InvalidSchema(format!(
                    "field ids must be contiguous from 0; position {} has id {}",
                    i, f.field_id
                )));
            }
        }
        Ok(Self { fields })
    }

    pub fn fields(&self) -> &[FieldSchema] {
        &self.fields
    }

    pub fn field(&self, i: usize) -> &FieldSchema {
        &self.fields[i]
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.name.clone()).collect()
    }

    /// Checks arity, kinds, category ranges and finiteness of `inst`.
    pub fn validate(&self, inst: &Instance) -> Result<()> {
        if inst.values.len() != self.fields.len() {
            return Err(Error::SchemaMismatch(format!(
                "expected {} values, got {}",
                self.fields.len(),
                inst.values.len()
            )));
        }
        for (f, v) in self.fields.iter().zip(&inst.values) {
            match (f.kind, *v) {
                (FieldKind::Categorical, Value::Category(c)) => {
                    let card = f.vocab.cardinality();
                    if c >= card {
                        return Err(Error::CategoryOutOfRange {
                            field: f.field_id,
                            index: c,
                            cardinality: card,
                        });
                    }
                }
                (FieldKind::Numerical, Value::Number(x)) => {
                    if !x.is_finite() {
                        return Err(Error::SchemaMismatch(format!(
                            "field {} holds non-finite value {}",
                            f.field_id, x
                        )));
                    }
                }
                _ => {
                    return Err(Error::SchemaMismatch(format!(
                        "field {} has the wrong value kind",
                        f.field_id
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Category(usize),
    Number(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub label: bool,
    pub values: Vec<Value>,
}

impl Instance {
    pub fn new(label: bool, values: Vec<Value>) -> Self {
        Self { label, values }
    }

    pub fn target(&self) -> f64 {
        if self.label {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    schema: Arc<Schema>,
    instances: Vec<Instance>,
}

impl Dataset {
    /// Validates every instance against `schema`.
    pub fn new(schema: Arc<Schema>, instances: Vec<Instance>) -> Result<Self> {
        for inst in &instances {
            schema.validate(inst)?;
        }
        Ok(Self { schema, instances })
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.instances.iter().map(|i| i.label).collect()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: Arc::clone(&self.schema),
            instances: idx.iter().map(|&i| self.instances[i].clone()).collect(),
        }
    }
}

/// Seeded Fisher-Yates permutation of `0..len`.
fn permutation(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}

/// Splits into (train, validation, test) parts of sizes
/// `floor(K*r0)`, `floor(K*r1)` and the remainder, after a seeded shuffle.
pub fn split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| *r < 0.0 || !r.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRatios(sum));
    }
    let k = dataset.len();
    let n_train = libm::floor(k as f64 * ratios[0]) as usize;
    let n_val = (libm::floor(k as f64 * ratios[1]) as usize).min(k - n_train);
    let order = permutation(k, &mut ChaCha8Rng::seed_from_u64(seed));
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok((dataset.subset(train), dataset.subset(val), dataset.subset(test)))
}

/// Iterator over mini-batches of one epoch.
///
/// With shuffling on, the order depends only on `(seed, epoch)`.
pub struct Batches<'a> {
    instances: &'a [Instance],
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

pub fn batch_iter(dataset: &Dataset, batch_size: usize, shuffle: bool, seed: u64, epoch: u64) -> Batches<'_> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let order = if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch.wrapping_add(1));
        permutation(dataset.len(), &mut rng)
    } else {
        (0..dataset.len()).collect()
    };
    Batches {
        instances: dataset.instances(),
        order,
        batch_size,
        pos: 0,
    }
}

impl<'a> Iterator for Batches<'a> {
    type Item = Vec<&'a Instance>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].iter().map(|&i| &self.instances[i]).collect();
        self.pos = end;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy(k: usize) -> Dataset {
        let schema = Schema::new(vec![FieldSchema::numerical(0, "x")]).unwrap();
        let inst = (0..k)
            .map(|i| Instance::new(i % 2 == 0, vec![Value::Number(i as f64)]))
            .collect();
        Dataset::new(Arc::new(schema), inst).unwrap()
    }

    fn ids(d: &Dataset) -> Vec<usize> {
        d.instances()
            .iter()
            .map(|i| match i.values[0] {
                Value::Number(x) => x as usize,
                _ => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn vocabulary_reserves_slot_zero() {
        let v = Vocabulary::from_tokens(["a", "b", "a"]);
        assert_eq!(v.cardinality(), 3);
        assert_eq!(v.lookup("a"), 1);
        assert_eq!(v.lookup("b"), 2);
        assert_eq!(v.lookup("z"), OOV_INDEX);
        assert_eq!(v.token(0), None);
        assert_eq!(v.token(2), Some("b"));
    }

    #[test]
    fn schema_rejects_gaps_in_ids() {
        let err = Schema::new(vec![FieldSchema::numerical(1, "x")]).unwrap_err();
        assert!(matches!(err, Error::InvalidSchema(_)));
    }

    #[test]
    fn validate_catches_bad_instances() {
        let schema = Schema::new(vec![
            FieldSchema::categorical(0, "brand", Vocabulary::from_tokens(["a"])),
            FieldSchema::numerical(1, "age"),
        ])
        .unwrap();
        let ok = Instance::new(true, vec![Value::Category(1), Value::Number(2.0)]);
        assert!(schema.validate(&ok).is_ok());
        let out_of_range = Instance::new(true, vec![Value::Category(2), Value::Number(2.0)]);
        assert!(matches!(
            schema.validate(&out_of_range),
            Err(Error::CategoryOutOfRange { .. })
        ));
        let nan = Instance::new(true, vec![Value::Category(0), Value::Number(f64::NAN)]);
        assert!(schema.validate(&nan).is_err());
        let short = Instance::new(true, vec![Value::Category(0)]);
        assert!(schema.validate(&short).is_err());
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let (a, b, c) = split(&toy(10), [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let (a, b, c) = split(&toy(7), [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (5, 0, 2));
    }

    #[test]
    fn split_is_deterministic_partition() {
        let d = toy(37);
        let (a, b, c) = split(&d, [0.6, 0.2, 0.2], 9).unwrap();
        let (a2, _, _) = split(&d, [0.6, 0.2, 0.2], 9).unwrap();
        assert_eq!(ids(&a), ids(&a2));
        let mut all: Vec<usize> = [ids(&a), ids(&b), ids(&c)].concat();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_bad_ratios() {
        assert!(matches!(
            split(&toy(4), [0.5, 0.5, 0.1], 0),
            Err(Error::InvalidRatios(_))
        ));
        let empty = Dataset::new(toy(1).schema().clone(), vec![]).unwrap();
        assert!(split(&empty, [1.0, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn batches_cover_epoch() {
        let d = toy(10);
        let sizes: Vec<usize> = batch_iter(&d, 4, false, 0, 0).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let first: Vec<f64> = batch_iter(&d, 4, false, 0, 0)
            .next()
            .unwrap()
            .iter()
            .map(|i| match i.values[0] {
                Value::Number(x) => x,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(first, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn shuffled_batches_depend_on_seed_and_epoch() {
        let d = toy(50);
        let run = |seed, epoch| -> Vec<*const Instance> {
            batch_iter(&d, 7, true, seed, epoch)
                .flatten()
                .map(|i| i as *const Instance)
                .collect()
        };
        assert_eq!(run(3, 1), run(3, 1));
        assert_ne!(run(3, 1), run(3, 2));
        assert_eq!(run(3, 1).len(), 50);
    }
}
