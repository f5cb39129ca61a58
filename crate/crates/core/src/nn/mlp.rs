use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "softmax" => Some(Activation::Softmax),
            _ => None,
        }
    }

    fn apply<T: Scalar>(self, z: &Array2<T>) -> Array2<T> {
        match self {
            Activation::Identity => z.clone(),
            Activation::Tanh => z.mapv(|v| v.tanh()),
            Activation::Relu => z.mapv(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::Softmax => softmax_rows(z),
        }
    }

    /// Maps a gradient w.r.t. the activation output to one w.r.t. its input.
    fn backprop<T: Scalar>(self, out: &Array2<T>, grad: ArrayView2<T>) -> Array2<T> {
        match self {
            Activation::Identity => grad.to_owned(),
            Activation::Tanh => {
                let mut g = grad.to_owned();
                Zip::from(&mut g)
                    .and(out)
                    .for_each(|g, &y| *g = *g * (T::one() - y * y));
                g
            }
            Activation::Relu => {
                let mut g = grad.to_owned();
                Zip::from(&mut g).and(out).for_each(|g, &y| {
                    if y <= T::zero() {
                        *g = T::zero()
                    }
                });
                g
            }
            Activation::Softmax => {
                // J^T g = y * (g - <g, y>) row-wise.
                let mut g = grad.to_owned();
                for (mut grow, yrow) in g.rows_mut().into_iter().zip(out.rows()) {
                    let dot: T = grow.iter().zip(yrow.iter()).map(|(&a, &b)| a * b).sum();
                    Zip::from(&mut grow)
                        .and(&yrow)
                        .for_each(|gi, &yi| *gi = yi * (*gi - dot));
                }
                g
            }
        }
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows<T: Scalar>(z: &Array2<T>) -> Array2<T> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Layer sizes and activations of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub layers: Vec<(usize, Activation)>,
}

impl MlpSpec {
    /// `hidden` layers share one activation, followed by the output layer.
    pub fn new(
        input: usize,
        hidden: &[usize],
        hidden_act: Activation,
        output: usize,
        output_act: Activation,
    ) -> Self {
        let mut layers: Vec<_> = hidden.iter().map(|&h| (h, hidden_act)).collect();
        layers.push((output, output_act));
        MlpSpec { input, layers }
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::contract("network spec has no layers"));
        }
        if self.input == 0 || self.layers.iter().any(|&(w, _)| w == 0) {
            return Err(Error::contract("network spec has a zero-width layer"));
        }
        let last = self.layers.len() - 1;
        if self.layers[..last]
            .iter()
            .any(|&(_, a)| a == Activation::Softmax)
        {
            return Err(Error::contract("softmax is only allowed on the output layer"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `in x out`, so a batch propagates as `X W + b`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
}

static STAMPS: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    STAMPS.fetch_add(1, Ordering::Relaxed)
}

/// Fully connected feed-forward network.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
    // Changes on every parameter mutation; forward caches remember it.
    stamp: u64,
}

impl<T: PartialEq> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    stamp: u64,
    inputs: Vec<Array2<T>>,
    outputs: Vec<Array2<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &Array2<T> {
        self.outputs.last().unwrap()
    }

    pub fn input(&self) -> &Array2<T> {
        &self.inputs[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, k: T) {
        for l in &mut self.layers {
            l.weight.mapv_inplace(|v| v * k);
            l.bias.mapv_inplace(|v| v * k);
        }
    }

    /// Weights then bias, layer by layer; same order as [`Mlp::params_flat`].
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backward<T> {
    pub grads: Gradients<T>,
    /// Gradient w.r.t. the network input.
    pub input_grad: Array2<T>,
}

impl<T: Scalar> Mlp<T> {
    /// Scaled-uniform (Glorot) weights in `±sqrt(6 / (fan_in + fan_out))`,
    /// zero biases. Samples are drawn in `f64` so both precisions start from
    /// the same values.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut fan_in = spec.input;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for &(fan_out, activation) in &spec.layers {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                T::of(rng.random_range(-bound..bound))
            });
            layers.push(Dense {
                weight,
                bias: Array1::zeros(fan_out),
                activation,
            });
            fan_in = fan_out;
        }
        Ok(Mlp {
            layers,
            stamp: next_stamp(),
        })
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("network has no layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.ncols() {
                return Err(Error::contract(format!("layer {i}: bias/weight mismatch")));
            }
            if i > 0 && layers[i - 1].weight.ncols() != l.weight.nrows() {
                return Err(Error::contract(format!("layer {i}: dimensions do not chain")));
            }
            if i + 1 < layers.len() && l.activation == Activation::Softmax {
                return Err(Error::contract("softmax is only allowed on the output layer"));
            }
        }
        Ok(Mlp {
            layers,
            stamp: next_stamp(),
        })
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn spec(&self) -> MlpSpec {
        MlpSpec {
            input: self.in_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| (l.weight.ncols(), l.activation))
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Forward pass over a batch (one sample per row).
    pub fn forward(&self, x: ArrayView2<T>) -> Result<ForwardCache<T>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::contract(format!(
                "input width {} does not match network input {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for l in &self.layers {
            let mut z = cur.dot(&l.weight);
            z += &l.bias;
            let y = l.activation.apply(&z);
            inputs.push(cur);
            cur = y.clone();
            outputs.push(y);
        }
        Ok(ForwardCache {
            stamp: self.stamp,
            inputs,
            outputs,
        })
    }

    /// Output for a batch, without keeping intermediates.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::contract(format!(
                "input width {} does not match network input {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        let mut cur = x.to_owned();
        for l in &self.layers {
            let mut z = cur.dot(&l.weight);
            z += &l.bias;
            cur = l.activation.apply(&z);
        }
        Ok(cur)
    }

    /// Output for a single sample.
    pub fn predict_one(&self, x: &[T]) -> Result<Vec<T>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::contract(e.to_string()))?;
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    fn check_cache(&self, cache: &ForwardCache<T>, grad_rows: usize, grad_cols: usize) -> Result<()> {
        if cache.stamp != self.stamp {
            return Err(Error::contract("forward cache is stale (parameters changed)"));
        }
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::contract("forward cache belongs to another network"));
        }
        let out = cache.output();
        if out.nrows() != grad_rows || out.ncols() != grad_cols {
            return Err(Error::contract(format!(
                "output gradient is {grad_rows}x{grad_cols}, expected {}x{}",
                out.nrows(),
                out.ncols()
            )));
        }
        Ok(())
    }

    /// Reverse-mode gradients given `dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: ArrayView2<T>) -> Result<Backward<T>> {
        self.check_cache(cache, grad_out.nrows(), grad_out.ncols())?;
        let last = self.layers.last().unwrap();
        let dz = last.activation.backprop(cache.output(), grad_out);
        self.backward_from(cache, dz)
    }

    /// Reverse-mode gradients given `dL/dz` at the output layer's
    /// pre-activation (the logits for a softmax head).
    pub fn backward_preact(&self, cache: &ForwardCache<T>, grad_z: Array2<T>) -> Result<Backward<T>> {
        self.check_cache(cache, grad_z.nrows(), grad_z.ncols())?;
        self.backward_from(cache, grad_z)
    }

    fn backward_from(&self, cache: &ForwardCache<T>, mut dz: Array2<T>) -> Result<Backward<T>> {
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let weight = x.t().dot(&dz);
            let bias = dz.sum_axis(Axis(0));
            grads.push(LayerGrad { weight, bias });
            let dx = dz.dot(&l.weight.t());
            dz = if i > 0 {
                self.layers[i - 1]
                    .activation
                    .backprop(&cache.outputs[i - 1], dx.view())
            } else {
                dx
            };
        }
        grads.reverse();
        Ok(Backward {
            grads: Gradients { layers: grads },
            input_grad: dz,
        })
    }

    /// Applies `f` to every (parameter, gradient) pair, then refreshes the
    /// cache stamp. This is the only parameter mutation path besides
    /// [`Mlp::set_params_flat`].
    pub(crate) fn update_with<F>(&mut self, grads: &Gradients<T>, mut f: F) -> Result<()>
    where
        F: FnMut(usize, &mut Array2<T>, &Array2<T>, &mut Array1<T>, &Array1<T>),
    {
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.weight.dim() != l.weight.dim() || g.bias.dim() != l.bias.dim())
        {
            return Err(Error::contract("gradient shapes do not match the network"));
        }
        for (i, (l, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            f(i, &mut l.weight, &g.weight, &mut l.bias, &g.bias);
        }
        self.stamp = next_stamp();
        Ok(())
    }

    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        self.stamp = next_stamp();
        Ok(())
    }

    /// Converts to another precision through `f64`.
    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.mapv(|v| U::of(v.to_f64_lossy())),
                    bias: l.bias.mapv(|v| U::of(v.to_f64_lossy())),
                    activation: l.activation,
                })
                .collect(),
            stamp: next_stamp(),
        }
    }
}
