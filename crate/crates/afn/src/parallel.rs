//! Sharded inference. Rows are independent in infer mode, so chunking
//! never changes results.

use std::num::NonZeroUsize;
use std::thread;

use afn_core::data::{Dataset, Instance};
use afn_core::training::Metrics;
use afn_core::Model;

use crate::error::AppResult;

pub const THREADS_ENV: &str = "AFN_NUM_THREADS";

const MIN_CHUNK: usize = 512;

/// Worker count: `AFN_NUM_THREADS` when set to a positive integer,
/// otherwise the available parallelism.
pub fn num_threads() -> usize {
    let available = thread::available_parallelism().map_or(1, NonZeroUsize::get);
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(available)
}

/// Infer-mode logits for `rows`, computed on up to `threads` workers and
/// concatenated in input order.
pub fn predict_with<M: Model + Sync>(model: &M, rows: &[&Instance], threads: usize) -> AppResult<Vec<f64>> {
    let chunk = rows.len().div_ceil(threads.max(1)).max(MIN_CHUNK);
    if chunk >= rows.len() {
        return Ok(model.predict_batch(rows)?);
    }
    let parts = thread::scope(|s| {
        let handles: Vec<_> = rows
            .chunks(chunk)
            .map(|c| s.spawn(move || model.predict_batch(c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("inference worker panicked"))
            .collect::<Vec<_>>()
    });
    let mut out = Vec::with_capacity(rows.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn predict<M: Model + Sync>(model: &M, data: &Dataset) -> AppResult<Vec<f64>> {
    let rows: Vec<&Instance> = data.instances().iter().collect();
    predict_with(model, &rows, num_threads())
}

pub fn evaluate<M: Model + Sync>(model: &M, data: &Dataset) -> AppResult<Metrics> {
    let logits = predict(model, data)?;
    Ok(Metrics::from_logits(&data.labels(), &logits)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use afn_core::data::{FieldSchema, Schema, Value, Vocabulary};
    use afn_core::{ModelKind, ModelSpec};
    use std::sync::Arc;

    #[test]
    fn sharding_matches_a_single_pass_bitwise() {
        let schema = Arc::new(
            Schema::new(vec![
                FieldSchema::categorical(0, "a", Vocabulary::from_tokens(["p", "q", "r"])),
                FieldSchema::numerical(1, "b"),
            ])
            .unwrap(),
        );
        let rows: Vec<Instance> = (0..3000)
            .map(|i| {
                Instance::new(
                    i % 3 == 0,
                    vec![Value::Category(i % 4), Value::Number(0.1 + (i % 7) as f64)],
                )
            })
            .collect();
        let refs: Vec<&Instance> = rows.iter().collect();
        for kind in ModelKind::ALL {
            let mut spec = ModelSpec::new(kind);
            spec.max_order = 2;
            let model = spec.build(&schema, 3).unwrap();
            let whole = model.predict_batch(&refs).unwrap();
            for threads in [1, 2, 5] {
                let sharded = predict_with(&model, &refs, threads).unwrap();
                assert_eq!(whole.len(), sharded.len());
                assert!(whole.iter().zip(&sharded).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }
}
