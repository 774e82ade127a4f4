#![allow(dead_code)]

use std::sync::Arc;

use afn_core::data::{Dataset, FieldSchema, Instance, Schema, Value, Vocabulary};
use afn_core::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `categorical` fields with `cardinality - 1` observed tokens each, then
/// `numerical` fields.
pub fn schema(categorical: usize, cardinality: usize, numerical: usize) -> Schema {
    let mut fields = Vec::new();
    for i in 0..categorical {
        let tokens: Vec<String> = (1..cardinality).map(|t| format!("t{t}")).collect();
        fields.push(FieldSchema::categorical(
            i,
            &format!("c{i}"),
            Vocabulary::from_tokens(tokens),
        ));
    }
    for j in 0..numerical {
        let id = categorical + j;
        fields.push(FieldSchema::numerical(id, &format!("n{id}")));
    }
    Schema::new(fields).unwrap()
}

pub fn instances(schema: &Schema, count: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let values = schema
                .fields()
                .iter()
                .map(|f| match f.cardinality() {
                    Some(c) => Value::Category(rng.random_range(0..c)),
                    None => Value::Number(rng.random_range(0.5..1.5)),
                })
                .collect();
            Instance::new(rng.random::<bool>(), values)
        })
        .collect()
}

pub fn dataset(schema: &Schema, count: usize, seed: u64) -> Dataset {
    Dataset::new(Arc::new(schema.clone()), instances(schema, count, seed)).unwrap()
}

/// Rewrites every embedding and linear-term entry as a random sign times a
/// magnitude in `[0.2, 1.0]`. This keeps the positivity clamp and the
/// logarithm well conditioned for finite differences and moves the model off
/// the all-zero start, where balanced labels give exactly zero gradients.
pub fn spread_embeddings<M: Model>(model: &mut M, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for slot in model.named_tensors_mut() {
        if slot.name.contains("embed.") || slot.name.contains("linear.") || slot.name.ends_with("bias") {
            for x in slot.tensor.data_mut() {
                let mag: f64 = rng.random_range(0.2..1.0);
                *x = if rng.random::<bool>() { mag } else { -mag };
            }
        }
    }
}
