//! Synthetic click data whose label depends on a planted three-field
//! conjunction.
//!
//! Every field is categorical with tokens `v0..v{cardinality-1}`. Three
//! fields chosen by the seed each get a planted value that appears with
//! probability one half; the remaining values share the other half, and
//! the other fields are uniform. With `c` planted pairs present the label
//! is Bernoulli with logit `1 - c + 8 * [c == 3]`, so each planted pair on
//! its own lowers the click rate while all three together raise it sharply.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const PLANTED_ORDER: usize = 3;
const PLANTED_MASS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Cross3 {
    pub fields: usize,
    pub cardinality: usize,
}

impl Default for Cross3 {
    fn default() -> Self {
        Self {
            fields: 8,
            cardinality: 10,
        }
    }
}

/// Which (field, value) pairs form the conjunction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Planted {
    pub fields: Vec<usize>,
    pub values: Vec<usize>,
    pub field_names: Vec<String>,
}

pub struct Generator {
    spec: Cross3,
    planted: Planted,
    rng: ChaCha8Rng,
}

pub fn field_name(i: usize) -> String {
    format!("f{i}")
}

pub fn logit(present: usize) -> f64 {
    1.0 - present as f64 + if present == PLANTED_ORDER { 8.0 } else { 0.0 }
}

impl Generator {
    pub fn new(spec: Cross3, seed: u64) -> Result<Self, String> {
        if spec.fields < PLANTED_ORDER || spec.cardinality < 2 {
            return Err(format!(
                "cross3 needs at least {PLANTED_ORDER} fields and 2 values per field"
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fields = sample(&mut rng, spec.fields, PLANTED_ORDER).into_vec();
        fields.sort_unstable();
        let values = fields.iter().map(|_| rng.random_range(0..spec.cardinality)).collect();
        let field_names = fields.iter().map(|&f| field_name(f)).collect();
        Ok(Self {
            spec,
            planted: Planted {
                fields,
                values,
                field_names,
            },
            rng,
        })
    }

    pub fn planted(&self) -> &Planted {
        &self.planted
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.spec.fields).map(field_name).collect()
    }

    /// Draws one labeled row of value indices.
    pub fn row(&mut self) -> (bool, Vec<usize>) {
        let card = self.spec.cardinality;
        let mut values = Vec::with_capacity(self.spec.fields);
        let mut present = 0;
        for f in 0..self.spec.fields {
            let v = match self.planted.fields.iter().position(|&p| p == f) {
                Some(slot) => {
                    let target = self.planted.values[slot];
                    if self.rng.random::<f64>() < PLANTED_MASS {
                        present += 1;
                        target
                    } else {
                        let other = self.rng.random_range(0..card - 1);
                        if other >= target {
                            other + 1
                        } else {
                            other
                        }
                    }
                }
                None => self.rng.random_range(0..card),
            };
            values.push(v);
        }
        let p = afn_core::training::sigmoid(logit(present));
        (self.rng.random::<f64>() < p, values)
    }

    /// `n` rows rendered as tokens.
    pub fn rows(&mut self, n: usize) -> Vec<(bool, Vec<String>)> {
        (0..n)
            .map(|_| {
                let (label, values) = self.row();
                (label, values.iter().map(|v| format!("v{v}")).collect())
            })
            .collect()
    }
}
