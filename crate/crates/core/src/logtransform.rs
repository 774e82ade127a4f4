//! Vector-wise logarithmic neurons.
//!
//! Neuron `j` maps the `m` positive field embeddings to
//! `y_j = exp(sum_i w_ij * ln e_i) = e_1^w_1j (.) ... (.) e_m^w_mj`, applied
//! per embedding dimension. Exponents are unconstrained reals, so a neuron
//! can express any product of fields, including fractional and negative
//! orders.
//!
//! Everything is computed in log space. The exponent `s = sum_i w_ij ln e_i`
//! saturates at `+-EXPONENT_LIMIT` before `exp`; outside that range the
//! gradient is zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::model::{Parameters, Role, Slot};
use crate::{Error, Result, Tensor};

pub const EXPONENT_LIMIT: f64 = 30.0;

/// Exponent matrix `W` of shape `m x N` (field by neuron).
#[derive(Debug, Clone, PartialEq)]
pub struct LtlParams {
    pub weights: Tensor,
}

impl LtlParams {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "exponent matrix must be 2-D, got {:?}",
                weights.shape()
            )));
        }
        Ok(Self { weights })
    }

    /// Entries uniform in `[0, 1/m]`.
    pub fn uniform<R: Rng + ?Sized>(num_fields: usize, num_neurons: usize, rng: &mut R) -> Self {
        let mut weights = Tensor::zeros(&[num_fields, num_neurons]);
        let hi = 1.0 / num_fields as f64;
        for w in weights.data_mut() {
            *w = rng.random::<f64>() * hi;
        }
        Self { weights }
    }

    pub fn num_fields(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_neurons(&self) -> usize {
        self.weights.cols()
    }

    /// Exponent of field `i` in neuron `j`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.at(i, j)
    }
}

impl Parameters for LtlParams {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        out.push(Slot::new(format!("{prefix}ltl.W"), Role::Trainable, &self.weights));
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        out.push(Slot::new(format!("{prefix}ltl.W"), Role::Trainable, &mut self.weights));
    }
}

/// `ln` of an `m * k` block of strictly positive embeddings.
pub fn log_embeddings(e_pos: &[f64], k: usize, out: &mut [f64]) -> Result<()> {
    for (idx, (o, &e)) in out.iter_mut().zip(e_pos).enumerate() {
        if !(e > 0.0) {
            return Err(Error::NonPositive {
                row: idx / k,
                col: idx % k,
                value: e,
            });
        }
        *o = libm::log(e);
    }
    Ok(())
}

/// `s[j][d] = sum_i w[i][j] * l[i][d]` for one instance (`l` is `m * k`,
/// `s` is `N * k`).
pub fn weighted_log_sum(l: &[f64], w: &Tensor, k: usize, s: &mut [f64]) {
    let (m, n) = (w.rows(), w.cols());
    s.fill(0.0);
    for i in 0..m {
        let li = &l[i * k..(i + 1) * k];
        let wi = w.row(i);
        for j in 0..n {
            let wij = wi[j];
            if wij == 0.0 {
                continue;
            }
            let sj = &mut s[j * k..(j + 1) * k];
            for (acc, &x) in sj.iter_mut().zip(li) {
                *acc += wij * x;
            }
        }
    }
}

/// Reverse of [`weighted_log_sum`]: adds `dW` into `dw` and writes `dl`.
pub fn weighted_log_sum_backward(l: &[f64], w: &Tensor, k: usize, ds: &[f64], dw: &mut Tensor, dl: &mut [f64]) {
    let (m, n) = (w.rows(), w.cols());
    for i in 0..m {
        let li = &l[i * k..(i + 1) * k];
        let dli = &mut dl[i * k..(i + 1) * k];
        dli.fill(0.0);
        for j in 0..n {
            let dsj = &ds[j * k..(j + 1) * k];
            let mut acc = 0.0;
            let wij = w.at(i, j);
            for d in 0..k {
                acc += dsj[d] * li[d];
                dli[d] += dsj[d] * wij;
            }
            let cols = dw.cols();
            dw.data_mut()[i * cols + j] += acc;
        }
    }
}

/// `exp(clamp(s, -EXPONENT_LIMIT, EXPONENT_LIMIT))` element-wise.
pub fn saturating_exp(s: &[f64], y: &mut [f64]) {
    for (o, &x) in y.iter_mut().zip(s) {
        *o = libm::exp(x.clamp(-EXPONENT_LIMIT, EXPONENT_LIMIT));
    }
}

/// `ds = dy * y` inside the saturation range, zero outside.
pub fn saturating_exp_backward(s: &[f64], y: &[f64], dy: &[f64], ds: &mut [f64]) {
    for (((o, &x), &yv), &g) in ds.iter_mut().zip(s).zip(y).zip(dy) {
        *o = if libm::fabs(x) <= EXPONENT_LIMIT { g * yv } else { 0.0 };
    }
}

fn check_input(e_pos: &Tensor, params: &LtlParams) -> Result<()> {
    if e_pos.shape().len() != 2 || e_pos.rows() != params.num_fields() {
        return Err(Error::Shape(format!(
            "embeddings {:?} do not match {} fields",
            e_pos.shape(),
            params.num_fields()
        )));
    }
    Ok(())
}

/// Output of all `N` neurons for one `m x k` block of positive embeddings,
/// as an `N x k` matrix.
pub fn ltl_forward(e_pos: &Tensor, params: &LtlParams) -> Result<Tensor> {
    check_input(e_pos, params)?;
    let k = e_pos.cols();
    let mut l = vec![0.0; e_pos.len()];
    log_embeddings(e_pos.data(), k, &mut l)?;
    let mut s = vec![0.0; params.num_neurons() * k];
    weighted_log_sum(&l, &params.weights, k, &mut s);
    let mut y = Tensor::zeros(&[params.num_neurons(), k]);
    saturating_exp(&s, y.data_mut());
    Ok(y)
}

/// Gradients `(dW, dE)` of `sum(upstream .* ltl_forward(e_pos))`.
pub fn ltl_backward(e_pos: &Tensor, params: &LtlParams, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
    check_input(e_pos, params)?;
    let k = e_pos.cols();
    let n = params.num_neurons();
    if upstream.shape() != [n, k] {
        return Err(Error::Shape(format!(
            "upstream {:?}, expected [{}, {}]",
            upstream.shape(),
            n,
            k
        )));
    }
    let mut l = vec![0.0; e_pos.len()];
    log_embeddings(e_pos.data(), k, &mut l)?;
    let mut s = vec![0.0; n * k];
    weighted_log_sum(&l, &params.weights, k, &mut s);
    let mut y = vec![0.0; n * k];
    saturating_exp(&s, &mut y);
    let mut ds = vec![0.0; n * k];
    saturating_exp_backward(&s, &y, upstream.data(), &mut ds);
    let mut dw = params.weights.zeros_like();
    let mut dl = vec![0.0; e_pos.len()];
    weighted_log_sum_backward(&l, &params.weights, k, &ds, &mut dw, &mut dl);
    let de = dl.iter().zip(e_pos.data()).map(|(g, e)| g / e).collect();
    Ok((dw, Tensor::from_vec(e_pos.shape(), de)?))
}

/// Order of the cross feature in neuron `j`: `sum_i |w_ij|`.
pub fn cross_feature_order(params: &LtlParams, j: usize) -> Result<f64> {
    let n = params.num_neurons();
    if j >= n {
        return Err(Error::IndexOutOfRange { index: j, len: n });
    }
    Ok((0..params.num_fields()).map(|i| libm::fabs(params.weight(i, j))).sum())
}

/// Absolute exponents per (field, neuron) and their per-field totals.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderProfile {
    /// `m x N`, entries `|w_ij|`.
    pub abs_weights: Tensor,
    /// `sum_j |w_ij|` for each field.
    pub field_sums: Vec<f64>,
}

pub fn field_order_profile(params: &LtlParams) -> OrderProfile {
    let mut abs_weights = params.weights.clone();
    abs_weights.data_mut().iter_mut().for_each(|w| *w = libm::fabs(*w));
    let field_sums = (0..abs_weights.rows())
        .map(|i| abs_weights.row(i).iter().sum())
        .collect();
    OrderProfile {
        abs_weights,
        field_sums,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(rows: &[&[f64]]) -> LtlParams {
        LtlParams::new(Tensor::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn unit_exponents_multiply_fields() {
        let e = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let y = ltl_forward(&e, &params(&[&[1.0], &[1.0]])).unwrap();
        approx::assert_relative_eq!(y.data()[0], 3.0, max_relative = 1e-15);
        approx::assert_relative_eq!(y.data()[1], 8.0, max_relative = 1e-15);
    }

    #[test]
    fn zero_exponents_give_ones() {
        let e = Tensor::from_rows(&[&[0.2, 7.0, 1e-7], &[3.0, 0.01, 2.0]]).unwrap();
        let y = ltl_forward(&e, &params(&[&[0.0], &[0.0]])).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn one_hot_exponent_selects_field() {
        let e = Tensor::from_rows(&[&[0.25, 0.5], &[3.0, 4.0]]).unwrap();
        let y = ltl_forward(&e, &params(&[&[0.0], &[1.0]])).unwrap();
        approx::assert_relative_eq!(y.data()[0], 3.0, max_relative = 1e-15);
        approx::assert_relative_eq!(y.data()[1], 4.0, max_relative = 1e-15);
    }

    #[test]
    fn rejects_non_positive_input() {
        let e = Tensor::from_rows(&[&[1.0, 0.0]]).unwrap();
        assert!(matches!(
            ltl_forward(&e, &params(&[&[1.0]])),
            Err(Error::NonPositive { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn saturation_caps_the_exponent() {
        let e = Tensor::from_rows(&[&[1e-7]]).unwrap();
        let p = params(&[&[10.0]]);
        let y = ltl_forward(&e, &p).unwrap();
        assert_eq!(y.data()[0], libm::exp(-EXPONENT_LIMIT));
        let (dw, de) = ltl_backward(&e, &p, &Tensor::filled(&[1, 1], 1.0)).unwrap();
        assert_eq!((dw.data()[0], de.data()[0]), (0.0, 0.0));
    }

    #[test]
    fn zero_exponent_gradient_is_sum_of_logs() {
        let e = Tensor::from_rows(&[&[0.5, 2.0], &[3.0, 0.1]]).unwrap();
        let p = params(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let (dw, _) = ltl_backward(&e, &p, &Tensor::filled(&[2, 2], 1.0)).unwrap();
        let row0 = libm::log(0.5) + libm::log(2.0);
        let row1 = libm::log(3.0) + libm::log(0.1);
        for j in 0..2 {
            approx::assert_relative_eq!(dw.at(0, j), row0, max_relative = 1e-14);
            approx::assert_relative_eq!(dw.at(1, j), row1, max_relative = 1e-14);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let e = Tensor::from_rows(&[&[0.5, 2.0], &[3.0, 0.1]]).unwrap();
        let p = params(&[&[0.3, -1.0], &[0.7, 2.0]]);
        let (dw, de) = ltl_backward(&e, &p, &Tensor::zeros(&[2, 2])).unwrap();
        assert!(dw.data().iter().chain(de.data()).all(|&g| g == 0.0));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let m = rng.random_range(1..5usize);
            let n = rng.random_range(1..4usize);
            let k = rng.random_range(1..4usize);
            let e = Tensor::from_vec(&[m, k], (0..m * k).map(|_| rng.random_range(0.2..3.0)).collect()).unwrap();
            let w = Tensor::from_vec(&[m, n], (0..m * n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
            let up = Tensor::from_vec(&[n, k], (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let p = LtlParams::new(w).unwrap();
            let f = |e: &Tensor, p: &LtlParams| -> f64 {
                let y = ltl_forward(e, p).unwrap();
                y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            };
            let (dw, de) = ltl_backward(&e, &p, &up).unwrap();
            for idx in 0..p.weights.len() {
                let mut plus = p.clone();
                plus.weights.data_mut()[idx] += h;
                let mut minus = p.clone();
                minus.weights.data_mut()[idx] -= h;
                let num = (f(&e, &plus) - f(&e, &minus)) / (2.0 * h);
                worst = worst.max(rel_err(dw.data()[idx], num));
            }
            for idx in 0..e.len() {
                let mut plus = e.clone();
                plus.data_mut()[idx] += h;
                let mut minus = e.clone();
                minus.data_mut()[idx] -= h;
                let num = (f(&plus, &p) - f(&minus, &p)) / (2.0 * h);
                worst = worst.max(rel_err(de.data()[idx], num));
            }
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    #[test]
    fn cross_order_examples() {
        let p = params(&[&[0.5, 0.0, 1.0], &[-0.5, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        assert_eq!(cross_feature_order(&p, 0).unwrap(), 2.0);
        assert_eq!(cross_feature_order(&p, 1).unwrap(), 0.0);
        assert_eq!(cross_feature_order(&p, 2).unwrap(), 2.0);
        assert!(matches!(
            cross_feature_order(&p, 3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn order_profile_examples() {
        let prof = field_order_profile(&params(&[&[0.2], &[-0.7]]));
        assert_eq!(prof.field_sums, vec![0.2, 0.7]);
        assert_eq!(prof.abs_weights.data(), &[0.2, 0.7]);

        let zero = field_order_profile(&params(&[&[0.0, 0.0], &[0.0, 0.0]]));
        assert!(zero.field_sums.iter().all(|&s| s == 0.0));

        let dominant = field_order_profile(&params(&[&[0.1, -0.2], &[2.0, -1.5], &[0.3, 0.3]]));
        let argmax = dominant
            .field_sums
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 1);
    }

    #[test]
    fn uniform_init_stays_in_range() {
        let p = LtlParams::uniform(4, 6, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(p.weights.data().iter().all(|&w| (0.0..=0.25).contains(&w)));
    }

    proptest! {
        #[test]
        fn outputs_are_strictly_positive(
            seed in 0u64..1000,
            scale in 0.1f64..20.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = Tensor::from_vec(&[3, 2], (0..6).map(|_| rng.random_range(1e-7..5.0)).collect()).unwrap();
            let w = Tensor::from_vec(&[3, 4], (0..12).map(|_| rng.random_range(-scale..scale)).collect()).unwrap();
            let y = ltl_forward(&e, &LtlParams::new(w).unwrap()).unwrap();
            prop_assert!(y.data().iter().all(|&v| v > 0.0 && v.is_finite()));
        }
    }
}
