//! Parameter storage and the handful of layer primitives the models use.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::graph::{grad, Var};
use crate::kernels::ConvGeom;
use crate::tensor::Tensor;

/// Named trainable parameters plus non-trainable buffers (running stats).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(params: BTreeMap<String, Tensor>, buffers: BTreeMap<String, Tensor>) -> Self {
        ParamStore { params, buffers }
    }

    pub fn insert_param(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor) {
        self.buffers.insert(name.into(), t);
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Wraps every parameter in a gradient-tracked leaf.
    pub fn bind(&self) -> Bound {
        self.bind_with(true)
    }

    /// Wraps every parameter as a constant (inference, or the other
    /// network's turn in an alternating optimisation).
    pub fn bind_frozen(&self) -> Bound {
        self.bind_with(false)
    }

    fn bind_with(&self, track: bool) -> Bound {
        let mut vars = BTreeMap::new();
        for (k, t) in &self.params {
            let v = if track { Var::param(t.clone()) } else { Var::constant(t.clone()) };
            vars.insert(k.clone(), v);
        }
        for (k, t) in &self.buffers {
            vars.insert(k.clone(), Var::constant(t.clone()));
        }
        Bound { vars }
    }
}

/// Graph leaves for one forward pass over a [`ParamStore`].
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> &Var {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    /// First-order gradients of `loss` for every tracked parameter.
    pub fn grads(&self, loss: &Var) -> BTreeMap<String, Tensor> {
        let names: Vec<&String> = self
            .vars
            .iter()
            .filter(|(_, v)| v.requires_grad())
            .map(|(k, _)| k)
            .collect();
        let inputs: Vec<&Var> = names.iter().map(|k| &self.vars[*k]).collect();
        let gs = grad(loss, &inputs, false);
        names
            .into_iter()
            .cloned()
            .zip(gs.into_iter().map(|g| g.value().clone()))
            .collect()
    }
}

/// Glorot/Xavier uniform initialisation.
pub fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
}

/// Registers a dense layer `{prefix}.w: [inp, out]`, `{prefix}.b: [out]`.
pub fn init_dense<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, inp: usize, out: usize, rng: &mut R) {
    store.insert_param(format!("{prefix}.w"), glorot_uniform(&[inp, out], inp, out, rng));
    store.insert_param(format!("{prefix}.b"), Tensor::zeros(vec![out]));
}

/// Registers a conv layer `{prefix}.w: [out, inp, k, k]`, `{prefix}.b: [out]`.
pub fn init_conv<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    inp: usize,
    out: usize,
    kernel: usize,
    rng: &mut R,
) {
    let rf = kernel * kernel;
    store.insert_param(
        format!("{prefix}.w"),
        glorot_uniform(&[out, inp, kernel, kernel], inp * rf, out * rf, rng),
    );
    store.insert_param(format!("{prefix}.b"), Tensor::zeros(vec![out]));
}

/// Registers per-channel scale (ones) and shift (zeros).
pub fn init_affine(store: &mut ParamStore, prefix: &str, channels: usize) {
    store.insert_param(format!("{prefix}.gamma"), Tensor::ones(vec![channels]));
    store.insert_param(format!("{prefix}.beta"), Tensor::zeros(vec![channels]));
}

pub fn dense(p: &Bound, prefix: &str, x: &Var) -> Var {
    let w = p.get(&format!("{prefix}.w"));
    let b = p.get(&format!("{prefix}.b"));
    let out = w.shape()[1];
    x.matmul(w).add_bcast(&b.reshape(&[1, out]))
}

pub fn conv(p: &Bound, prefix: &str, x: &Var, geom: ConvGeom) -> Var {
    let w = p.get(&format!("{prefix}.w"));
    let b = p.get(&format!("{prefix}.b"));
    let out = w.shape()[0];
    x.conv2d(w, geom).add_bcast(&b.reshape(&[1, out, 1, 1]))
}

fn channel_affine(p: &Bound, prefix: &str, x: &Var) -> Var {
    let c = x.shape()[1];
    let gamma = p.get(&format!("{prefix}.gamma")).reshape(&[1, c, 1, 1]);
    let beta = p.get(&format!("{prefix}.beta")).reshape(&[1, c, 1, 1]);
    x.mul_bcast(&gamma).add_bcast(&beta)
}

/// Normalises `x` (NCHW) over the axes collapsed in `stat_shape`.
fn standardize(x: &Var, stat_shape: &[usize], eps: f64) -> (Var, Var, Var) {
    let count = (x.value().numel() / stat_shape.iter().product::<usize>()) as f64;
    let mean = x.sum_to(stat_shape).scale(1.0 / count);
    let centered = x.sub_bcast(&mean);
    let var = centered.square().sum_to(stat_shape).scale(1.0 / count);
    let inv_std = var.add_scalar(eps).sqrt().recip();
    (centered.mul_bcast(&inv_std), mean, var)
}

/// Batch normalisation with batch statistics. Returns the output and the
/// batch mean/variance so callers can update running averages.
pub fn batch_norm_train(p: &Bound, prefix: &str, x: &Var, eps: f64) -> (Var, Tensor, Tensor) {
    let c = x.shape()[1];
    let (normed, mean, var) = standardize(x, &[1, c, 1, 1], eps);
    (channel_affine(p, prefix, &normed), mean.value().reshape(vec![c]), var.value().reshape(vec![c]))
}

/// Batch normalisation with the stored running statistics.
pub fn batch_norm_eval(p: &Bound, prefix: &str, x: &Var, eps: f64) -> Var {
    let c = x.shape()[1];
    let mean = p.get(&format!("{prefix}.running_mean")).reshape(&[1, c, 1, 1]);
    let var = p.get(&format!("{prefix}.running_var")).reshape(&[1, c, 1, 1]);
    let normed = x.sub_bcast(&mean).mul_bcast(&var.add_scalar(eps).sqrt().recip());
    channel_affine(p, prefix, &normed)
}

/// Per-example normalisation over channels and space, per-channel affine.
pub fn layer_norm(p: &Bound, prefix: &str, x: &Var, eps: f64) -> Var {
    let n = x.shape()[0];
    let (normed, _, _) = standardize(x, &[n, 1, 1, 1], eps);
    channel_affine(p, prefix, &normed)
}

/// Inverted-dropout mask: zeros with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], p: f64, rng: &mut R) -> Tensor {
    let keep = 1.0 - p;
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect(),
    )
}
