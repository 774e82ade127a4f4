//! Layers downstream of the logarithmic neurons: batch normalization, ReLU
//! hidden layers and the scalar prediction head, each with an explicit
//! reverse pass.
//!
//! Every layer works on a batch matrix (`B x D`). Train mode normalizes with
//! batch statistics and returns a cache for the reverse pass; infer mode uses
//! the running statistics and is row-wise, so a row's output never depends
//! on the other rows in its batch.

mod afn;

pub use afn::{Afn, AfnCache, AfnConfig, LogNormSite};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::model::{Parameters, Role, Slot};
use crate::tensor::{affine_rows, dot};
use crate::{Error, Result, Tensor};

pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;
pub const DEFAULT_BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Fully connected layer `W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    /// He-style uniform init: `U(-sqrt(6/in), sqrt(6/in))`, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = libm::sqrt(6.0 / input.max(1) as f64);
        let mut weight = Tensor::zeros(&[output, input]);
        for w in weight.data_mut() {
            *w = (2.0 * rng.random::<f64>() - 1.0) * bound;
        }
        Self {
            weight,
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.rows()] {
            return Err(Error::Shape(format!(
                "dense layer W {:?} with b {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    /// Decay of the running statistics: `r <- momentum * r + (1 - momentum) * batch`.
    pub momentum: f64,
    pub eps: f64,
}

/// Batch statistics kept for the reverse pass and the running-stat update.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(dim: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: Tensor::filled(&[dim], 1.0),
            beta: Tensor::zeros(&[dim]),
            running_mean: Tensor::zeros(&[dim]),
            running_var: Tensor::filled(&[dim], 1.0),
            momentum,
            eps,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "batch norm over {} features got {:?}",
                self.dim(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Normalizes `x` (`B x D`). Train mode returns the batch cache.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<BnCache>)> {
        self.check(x)?;
        match mode {
            Mode::Infer => {
                let mut out = x.clone();
                for r in 0..out.rows() {
                    self.infer_row(out.row_mut(r));
                }
                Ok((out, None))
            }
            Mode::Train => {
                let (b, d) = (x.rows(), x.cols());
                if b < 2 {
                    return Err(Error::BatchTooSmall(b));
                }
                let mut mean = vec![0.0; d];
                for r in 0..b {
                    for (m, v) in mean.iter_mut().zip(x.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= b as f64);
                let mut var = vec![0.0; d];
                for r in 0..b {
                    for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= b as f64);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + self.eps)).collect();
                let mut xhat = x.clone();
                let mut out = x.clone();
                for r in 0..b {
                    let xr = xhat.row_mut(r);
                    for c in 0..d {
                        xr[c] = (xr[c] - mean[c]) * inv_std[c];
                    }
                    let orow = out.row_mut(r);
                    for c in 0..d {
                        orow[c] = self.gamma.data()[c] * xhat.at(r, c) + self.beta.data()[c];
                    }
                }
                Ok((
                    out,
                    Some(BnCache {
                        xhat,
                        inv_std,
                        mean,
                        var,
                    }),
                ))
            }
        }
    }

    fn infer_row(&self, x: &mut [f64]) {
        let g = self.gamma.data();
        let bta = self.beta.data();
        let mu = self.running_mean.data();
        let var = self.running_var.data();
        for c in 0..x.len() {
            x[c] = g[c] * (x[c] - mu[c]) / libm::sqrt(var[c] + self.eps) + bta[c];
        }
    }

    /// Reverse pass in train mode; adds `dgamma`, `dbeta` into `grad`.
    pub fn backward(&self, cache: &BnCache, dout: &Tensor, grad: &mut BatchNorm) -> Tensor {
        let (b, d) = (dout.rows(), dout.cols());
        let bf = b as f64;
        let mut sum_dxhat = vec![0.0; d];
        let mut sum_dxhat_xhat = vec![0.0; d];
        for r in 0..b {
            let dy = dout.row(r);
            let xh = cache.xhat.row(r);
            for c in 0..d {
                grad.gamma.data_mut()[c] += dy[c] * xh[c];
                grad.beta.data_mut()[c] += dy[c];
                let dxh = dy[c] * self.gamma.data()[c];
                sum_dxhat[c] += dxh;
                sum_dxhat_xhat[c] += dxh * xh[c];
            }
        }
        let mut dx = Tensor::zeros(&[b, d]);
        for r in 0..b {
            let dy = dout.row(r);
            let xh = cache.xhat.row(r);
            let dxr = dx.row_mut(r);
            for c in 0..d {
                let dxh = dy[c] * self.gamma.data()[c];
                dxr[c] = cache.inv_std[c] / bf * (bf * dxh - sum_dxhat[c] - xh[c] * sum_dxhat_xhat[c]);
            }
        }
        dx
    }

    /// Folds one batch into the running statistics (unbiased variance).
    pub fn commit(&mut self, cache: &BnCache) {
        let b = cache.xhat.rows() as f64;
        let correction = b / (b - 1.0);
        let mom = self.momentum;
        for (r, m) in self.running_mean.data_mut().iter_mut().zip(&cache.mean) {
            *r = mom * *r + (1.0 - mom) * m;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(&cache.var) {
            *r = mom * *r + (1.0 - mom) * v * correction;
        }
    }

    pub(crate) fn slots_at<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        out.push(Slot::new(format!("{prefix}gamma"), Role::Trainable, &self.gamma));
        out.push(Slot::new(format!("{prefix}beta"), Role::Trainable, &self.beta));
        out.push(Slot::new(
            format!("{prefix}running_mean"),
            Role::Buffer,
            &self.running_mean,
        ));
        out.push(Slot::new(
            format!("{prefix}running_var"),
            Role::Buffer,
            &self.running_var,
        ));
    }

    pub(crate) fn slots_mut_at<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        out.push(Slot::new(format!("{prefix}gamma"), Role::Trainable, &mut self.gamma));
        out.push(Slot::new(format!("{prefix}beta"), Role::Trainable, &mut self.beta));
        out.push(Slot::new(
            format!("{prefix}running_mean"),
            Role::Buffer,
            &mut self.running_mean,
        ));
        out.push(Slot::new(
            format!("{prefix}running_var"),
            Role::Buffer,
            &mut self.running_var,
        ));
    }
}

/// Normalizes a batch; in train mode also folds the batch statistics into
/// the running statistics.
pub fn bn_forward(x: &Tensor, bn: &mut BatchNorm, mode: Mode) -> Result<Tensor> {
    let (out, cache) = bn.forward(x, mode)?;
    if let Some(c) = cache {
        bn.commit(&c);
    }
    Ok(out)
}

/// Row-major flattening of the `N x k` neuron outputs.
pub fn concat_neurons(y: &Tensor) -> Vec<f64> {
    y.data().to_vec()
}

/// Stack of `ReLU(BN(W z + b))` layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub norms: Vec<Option<BatchNorm>>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Tensor>,
    norms: Vec<Option<BnCache>>,
    outputs: Vec<Tensor>,
}

impl Mlp {
    /// `norm` carries `(momentum, eps)` when hidden layers are batch-normalized.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], norm: Option<(f64, f64)>, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut norms = Vec::with_capacity(hidden.len());
        let mut fan_in = input_dim;
        for &width in hidden {
            layers.push(DenseLayer::he_uniform(fan_in, width, rng));
            norms.push(norm.map(|(m, e)| BatchNorm::new(width, m, e)));
            fan_in = width;
        }
        Self { layers, norms }
    }

    pub fn from_layers(layers: Vec<DenseLayer>, norms: Vec<Option<BatchNorm>>) -> Result<Self> {
        if layers.len() != norms.len() {
            return Err(Error::Shape(format!(
                "{} layers but {} norm slots",
                layers.len(),
                norms.len()
            )));
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer output {} feeds input {}",
                    w[0].output_dim(),
                    w[1].input_dim()
                )));
            }
        }
        for (l, n) in layers.iter().zip(&norms) {
            if let Some(n) = n {
                if n.dim() != l.output_dim() {
                    return Err(Error::Shape(format!(
                        "batch norm over {} after a layer of width {}",
                        n.dim(),
                        l.output_dim()
                    )));
                }
            }
        }
        Ok(Self { layers, norms })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, DenseLayer::output_dim)
    }

    pub fn uses_batch_statistics(&self) -> bool {
        self.norms.iter().any(Option::is_some)
    }

    pub fn forward(&self, x: Tensor, mode: Mode) -> Result<(Tensor, MlpCache)> {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.depth()),
            norms: Vec::with_capacity(self.depth()),
            outputs: Vec::with_capacity(self.depth()),
        };
        let mut z = x;
        for (layer, norm) in self.layers.iter().zip(&self.norms) {
            if z.cols() != layer.input_dim() {
                return Err(Error::Shape(format!(
                    "layer expects {} inputs, got {}",
                    layer.input_dim(),
                    z.cols()
                )));
            }
            let mut a = affine_rows(&z, &layer.weight, layer.bias.data());
            let mut bn_cache = None;
            if let Some(bn) = norm {
                let (normed, c) = bn.forward(&a, mode)?;
                a = normed;
                bn_cache = c;
            }
            a.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            cache.inputs.push(z);
            cache.norms.push(bn_cache);
            cache.outputs.push(a.clone());
            z = a;
        }
        Ok((z, cache))
    }

    /// Reverse pass; adds parameter gradients into `grad` and returns the
    /// gradient with respect to the MLP input.
    pub fn backward(&self, cache: &MlpCache, dout: Tensor, grad: &mut Mlp) -> Tensor {
        let mut dz = dout;
        for l in (0..self.depth()).rev() {
            let out = &cache.outputs[l];
            for (g, &o) in dz.data_mut().iter_mut().zip(out.data()) {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }
            if let (Some(bn), Some(c)) = (&self.norms[l], &cache.norms[l]) {
                let gbn = grad.norms[l].as_mut().expect("gradient mirrors model");
                dz = bn.backward(c, &dz, gbn);
            }
            let input = &cache.inputs[l];
            let layer = &self.layers[l];
            let glayer = &mut grad.layers[l];
            let (b, out_dim, in_dim) = (dz.rows(), layer.output_dim(), layer.input_dim());
            let mut dx = Tensor::zeros(&[b, in_dim]);
            for r in 0..b {
                let dzr = dz.row(r);
                let xr = input.row(r);
                let dxr = dx.row_mut(r);
                for o in 0..out_dim {
                    let g = dzr[o];
                    if g == 0.0 {
                        continue;
                    }
                    glayer.bias.data_mut()[o] += g;
                    let wrow = layer.weight.row(o);
                    let gw = glayer.weight.row_mut(o);
                    for i in 0..in_dim {
                        gw[i] += g * xr[i];
                        dxr[i] += g * wrow[i];
                    }
                }
            }
            dz = dx;
        }
        dz
    }

    pub fn commit(&mut self, cache: &MlpCache) {
        for (norm, c) in self.norms.iter_mut().zip(&cache.norms) {
            if let (Some(bn), Some(c)) = (norm, c) {
                bn.commit(c);
            }
        }
    }

    pub(crate) fn slots_at<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        for (l, (layer, norm)) in self.layers.iter().zip(&self.norms).enumerate() {
            out.push(Slot::new(format!("{prefix}mlp.{l}.W"), Role::Trainable, &layer.weight));
            out.push(Slot::new(format!("{prefix}mlp.{l}.b"), Role::Trainable, &layer.bias));
            if let Some(bn) = norm {
                bn.slots_at(&format!("{prefix}bn.hidden.{l}."), out);
            }
        }
    }

    pub(crate) fn slots_mut_at<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        for (l, (layer, norm)) in self.layers.iter_mut().zip(&mut self.norms).enumerate() {
            out.push(Slot::new(
                format!("{prefix}mlp.{l}.W"),
                Role::Trainable,
                &mut layer.weight,
            ));
            out.push(Slot::new(
                format!("{prefix}mlp.{l}.b"),
                Role::Trainable,
                &mut layer.bias,
            ));
            if let Some(bn) = norm {
                bn.slots_mut_at(&format!("{prefix}bn.hidden.{l}."), out);
            }
        }
    }
}

/// Runs a single vector through the MLP. Train mode is only defined when no
/// layer is batch-normalized, since one row has no batch statistics.
pub fn mlp_forward(z0: &[f64], mlp: &Mlp, mode: Mode) -> Result<Vec<f64>> {
    let x = Tensor::from_vec(&[1, z0.len()], z0.to_vec())?;
    let (z, _) = mlp.forward(x, mode)?;
    Ok(z.into_vec())
}

/// `w_p . z_L + b_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl PredictionHead {
    pub fn he_uniform<R: Rng + ?Sized>(input: usize, rng: &mut R) -> Self {
        let layer = DenseLayer::he_uniform(input, 1, rng);
        Self {
            weight: Tensor::from_vec(&[input], layer.weight.into_vec()).expect("shape"),
            bias: Tensor::zeros(&[1]),
        }
    }

    pub fn new(weight: Vec<f64>, bias: f64) -> Self {
        let n = weight.len();
        Self {
            weight: Tensor::from_vec(&[n], weight).expect("shape"),
            bias: Tensor::from_vec(&[1], vec![bias]).expect("shape"),
        }
    }

    pub(crate) fn logits(&self, z: &Tensor) -> Vec<f64> {
        (0..z.rows())
            .map(|r| dot(self.weight.data(), z.row(r)) + self.bias.data()[0])
            .collect()
    }

    /// Adds head gradients into `grad` and returns `dlogit * w_p` per row.
    pub(crate) fn backward(&self, z: &Tensor, dlogits: &[f64], grad: &mut PredictionHead) -> Tensor {
        let mut dz = Tensor::zeros(&[z.rows(), z.cols()]);
        for (r, &g) in dlogits.iter().enumerate() {
            grad.bias.data_mut()[0] += g;
            for (gw, x) in grad.weight.data_mut().iter_mut().zip(z.row(r)) {
                *gw += g * x;
            }
            for (d, w) in dz.row_mut(r).iter_mut().zip(self.weight.data()) {
                *d = g * w;
            }
        }
        dz
    }

    pub(crate) fn slots_at<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        out.push(Slot::new(format!("{prefix}head.w"), Role::Trainable, &self.weight));
        out.push(Slot::new(format!("{prefix}head.b"), Role::Trainable, &self.bias));
    }

    pub(crate) fn slots_mut_at<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        out.push(Slot::new(format!("{prefix}head.w"), Role::Trainable, &mut self.weight));
        out.push(Slot::new(format!("{prefix}head.b"), Role::Trainable, &mut self.bias));
    }
}

pub fn predict_logit(z_last: &[f64], head: &PredictionHead) -> Result<f64> {
    if z_last.len() != head.weight.len() {
        return Err(Error::Shape(format!(
            "head expects {} inputs, got {}",
            head.weight.len(),
            z_last.len()
        )));
    }
    Ok(dot(head.weight.data(), z_last) + head.bias.data()[0])
}

impl Parameters for Mlp {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<Slot<&'a Tensor>>) {
        self.slots_at(prefix, out);
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<Slot<&'a mut Tensor>>) {
        self.slots_mut_at(prefix, out);
    }
}
