//! Factorization networks built on logarithmic neurons, with explicit forward and backward passes.
//!
//! The model embeds every feature field, forces the embeddings positive, and
//! feeds them through a layer of vector-wise logarithmic neurons
//! `y_j = exp(sum_i w_ij * ln e_i)`. Each neuron is a cross feature whose
//! per-field exponents are learned, so the order of an interaction is a
//! trained quantity instead of a fixed hyperparameter. A ReLU network and a
//! scalar head sit on top.
//!
//! Alongside the model the crate carries the reference models used as
//! baselines and oracles (logistic regression, FM, brute-force HOFM, a plain
//! DNN), log loss, Adam, AUC, a deterministic training loop with early
//! stopping, a finite-difference gradient checker, the affine AFN+DNN blend,
//! and the order-inspection utilities.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, checkpoints
//! and the command line live in the `afn` crate.

#![no_std]
#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::large_enum_variant
)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod baselines;
pub mod data;
pub mod embedding;
pub mod ensemble;
mod error;
pub mod logtransform;
pub mod model;
pub mod network;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{AnyModel, Model, ModelKind, ModelSpec, Parameters, Role};
pub use tensor::Tensor;
