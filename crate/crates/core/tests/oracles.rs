mod common;

use afn_core::baselines::{fm_interactions, hofm_interactions};
use afn_core::data::{FieldSchema, Instance, Schema, Value, Vocabulary};
use afn_core::embedding::{positive_clamp, EmbeddingTables, FieldTable, DEFAULT_CLAMP_EPS};
use afn_core::logtransform::{ltl_forward, LtlParams};
use afn_core::network::{Afn, AfnConfig, LogNormSite, Mlp, PredictionHead};
use afn_core::{Model, Tensor};
use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn subset_columns(m: usize, max_order: usize) -> Tensor {
    let subsets: Vec<Vec<usize>> = (2..=max_order).flat_map(|r| (0..m).combinations(r)).collect();
    let mut w = Tensor::zeros(&[m, subsets.len()]);
    for (j, s) in subsets.iter().enumerate() {
        for &i in s {
            w.set(i, j, 1.0);
        }
    }
    w
}

/// Single-row embedding tables holding `e` and the instance selecting it.
fn one_row_model(e: &Tensor, w: Tensor) -> (Afn, Instance) {
    let (m, k) = (e.rows(), e.cols());
    let tables = (0..m)
        .map(|i| FieldTable::Categorical(Tensor::from_rows(&[e.row(i)]).unwrap()))
        .collect();
    let tables = EmbeddingTables::from_tables(k, tables).unwrap();
    let n = w.cols();
    let config = AfnConfig {
        embed_dim: k,
        log_neurons: n,
        hidden: vec![],
        batch_norm: false,
        log_norm_site: LogNormSite::AfterLog,
        clamp_eps: DEFAULT_CLAMP_EPS,
        init_scale: 1.0,
        bn_momentum: 0.9,
        bn_eps: 1e-5,
    };
    let model = Afn::from_parts(
        config,
        tables,
        LtlParams::new(w).unwrap(),
        Mlp::from_layers(vec![], vec![]).unwrap(),
        PredictionHead::new(vec![1.0; n * k], 0.0),
    )
    .unwrap();
    (model, Instance::new(true, vec![Value::Category(0); m]))
}

fn random_embeddings(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Tensor {
    Tensor::from_vec(&[m, k], (0..m * k).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

#[test]
fn pairwise_columns_recover_fm() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let m = rng.random_range(2..=6);
        let k = rng.random_range(1..=4);
        let e = random_embeddings(&mut rng, m, k);
        let (model, inst) = one_row_model(&e, subset_columns(m, 2));
        let clamped = positive_clamp(&e, DEFAULT_CLAMP_EPS);
        let got = model.predict(&inst).unwrap();
        assert!((got - fm_interactions(&clamped)).abs() <= 1e-6);
    }
}

#[test]
fn subset_columns_recover_hofm() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let m = rng.random_range(3..=6);
        let k = rng.random_range(1..=4);
        let e = random_embeddings(&mut rng, m, k);
        let (model, inst) = one_row_model(&e, subset_columns(m, 3));
        let clamped = positive_clamp(&e, DEFAULT_CLAMP_EPS);
        let got = model.predict(&inst).unwrap();
        assert!((got - hofm_interactions(&clamped, 3).unwrap()).abs() <= 1e-6);
    }
}

#[test]
fn rescaling_a_field_scales_neurons_by_its_exponent() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let (m, k, n) = (4, 3, 5);
        let e = Tensor::from_vec(&[m, k], (0..m * k).map(|_| rng.random_range(0.1..3.0)).collect()).unwrap();
        let w = Tensor::from_vec(&[m, n], (0..m * n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let params = LtlParams::new(w).unwrap();
        let i = rng.random_range(0..m);
        let c: f64 = rng.random_range(0.2..5.0);
        let mut scaled = e.clone();
        scaled.row_mut(i).iter_mut().for_each(|x| *x *= c);
        let base = ltl_forward(&e, &params).unwrap();
        let after = ltl_forward(&scaled, &params).unwrap();
        for j in 0..n {
            let factor = c.powf(params.weight(i, j));
            for d in 0..k {
                let expected = base.at(j, d) * factor;
                assert!((after.at(j, d) - expected).abs() <= 1e-10 * expected.abs());
            }
        }
    }
}

#[test]
fn infer_mode_ignores_batch_companions() {
    let schema = Schema::new(vec![
        FieldSchema::categorical(0, "a", Vocabulary::from_tokens(["x", "y", "z"])),
        FieldSchema::categorical(1, "b", Vocabulary::from_tokens(["p", "q"])),
        FieldSchema::numerical(2, "c"),
    ])
    .unwrap();
    for kind in afn_core::ModelKind::ALL {
        let mut spec = afn_core::ModelSpec::new(kind);
        spec.embed_dim = 3;
        spec.log_neurons = 4;
        spec.hidden = vec![5, 3];
        let mut model = spec.build(&schema, 8).unwrap();
        // move running statistics away from their initial values
        let data = common::instances(&schema, 40, 9);
        let batch: Vec<_> = data.iter().collect();
        let (_, cache) = model.forward_train(&batch).unwrap();
        model.commit(&cache);
        let all = model.predict_batch(&batch).unwrap();
        for (inst, z) in data.iter().zip(&all) {
            assert_eq!(model.predict(inst).unwrap().to_bits(), z.to_bits(), "{kind:?}");
        }
    }
}
