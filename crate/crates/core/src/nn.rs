//! Feedforward Q-network: dense layers, ReLU on hidden layers, linear output.
//!
//! Generic over the scalar so the same code trains in `f32` and is
//! gradient-checked in `f64`.
//!
//! # Checkpoint layout
//!
//! All integers are little-endian `u32`, all floats little-endian IEEE-754
//! of the width named in the header.
//!
//! | bytes        | content                                              |
//! |--------------|------------------------------------------------------|
//! | 8            | magic `AOIQNET\0`                                    |
//! | 4            | format version (`1`)                                 |
//! | 4            | scalar width in bytes (`4` = f32, `8` = f64)         |
//! | 4            | `L`, number of layer sizes (input, hidden..., output)|
//! | 4 * L        | layer sizes                                          |
//! | per layer    | weights `in x out` row-major, then `out` biases      |
//!
//! Trailing bytes are rejected. Round trips are bit-exact.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, NdFloat};
use rand::Rng;

use crate::error::{Error, Result};

/// Floating-point types the network runs on.
pub trait Scalar: NdFloat + Default {
    const BYTES: usize;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const BYTES: usize = 4;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// One fully-connected layer, `y = x W + b` with `W` shaped `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub weights: Array2<S>,
    pub bias: Array1<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// Multilayer perceptron; every layer but the last is followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S> {
    pub layers: Vec<Dense<S>>,
}

/// Per-layer activations from a batched forward pass: `acts[0]` is the
/// input, `acts[i]` the (post-ReLU) output of layer `i`, the last entry the
/// linear network output.
pub struct ForwardCache<S> {
    pub acts: Vec<Array2<S>>,
}

impl<S> ForwardCache<S> {
    pub fn output(&self) -> &Array2<S> {
        self.acts.last().expect("at least the input")
    }
}

impl<S: Scalar> Mlp<S> {
    /// All-zero parameters.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Weights drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| S::from_f64(rng.gen_range(-bound..bound)));
        }
        net
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].fan_in()];
        sizes.extend(self.layers.iter().map(Dense::fan_out));
        sizes
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map(Dense::fan_out).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Forward pass for a single input.
    pub fn forward(&self, x: ArrayView1<S>) -> Result<Array1<S>> {
        if x.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                actual: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            // row-wise axpy over the row-major weights; much faster than a
            // strided vector-matrix product
            let mut z = layer.bias.clone();
            for (&xi, row) in h.iter().zip(layer.weights.rows()) {
                z.scaled_add(xi, &row);
            }
            if i < last {
                z.mapv_inplace(relu);
            }
            h = z;
        }
        Ok(h)
    }

    /// Batched forward pass (rows are samples).
    pub fn forward_batch(&self, x: ArrayView2<S>) -> Result<Array2<S>> {
        self.forward_cached(x)
            .map(|mut c| c.acts.pop().expect("output"))
    }

    pub fn forward_cached(&self, x: ArrayView2<S>) -> Result<ForwardCache<S>> {
        if x.ncols() != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                actual: x.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.weights);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(relu);
            }
            acts.push(z);
        }
        Ok(ForwardCache { acts })
    }

    /// Backpropagate `grad_out = dL/d(output)` through a cached forward pass.
    pub fn backward(&self, cache: &ForwardCache<S>, grad_out: Array2<S>) -> Vec<Dense<S>> {
        let mut grads: Vec<Dense<S>> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out;
        for i in (0..self.layers.len()).rev() {
            let input = &cache.acts[i];
            let weights = input.t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut prev = delta.dot(&self.layers[i].weights.t());
                // ReLU derivative from the stored post-activation
                ndarray::Zip::from(&mut prev).and(input).for_each(|d, &a| {
                    if a <= S::zero() {
                        *d = S::zero();
                    }
                });
                delta = prev;
            }
            grads.push(Dense { weights, bias });
        }
        grads.reverse();
        grads
    }

    /// Overwrite this network's parameters with `other`'s.
    pub fn copy_from(&mut self, other: &Mlp<S>) -> Result<()> {
        if self.layer_sizes() != other.layer_sizes() {
            return Err(Error::ShapeMismatch(
                self.layer_sizes(),
                other.layer_sizes(),
            ));
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.assign(&src.weights);
            dst.bias.assign(&src.bias);
        }
        Ok(())
    }

    pub fn params(&self) -> impl Iterator<Item = S> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut S> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// Convert to another scalar type (used to gradient-check in f64).
    pub fn cast<T: Scalar>(&self) -> Mlp<T> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weights: l.weights.mapv(|v| T::from_f64(v.to_f64())),
                    bias: l.bias.mapv(|v| T::from_f64(v.to_f64())),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = self.layer_sizes();
        let mut out = Vec::with_capacity(20 + 4 * sizes.len() + S::BYTES * self.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(S::BYTES as u32).to_le_bytes());
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in &sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        for layer in &self.layers {
            // iter() on a standard-layout array is row-major
            for &w in layer.weights.iter() {
                w.write_le(&mut out);
            }
            for &b in layer.bias.iter() {
                b.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let width = r.u32()? as usize;
        if width != S::BYTES {
            return Err(Error::Format(format!(
                "scalar width {width} does not match requested {}",
                S::BYTES
            )));
        }
        let count = r.u32()? as usize;
        if count < 2 {
            return Err(Error::Format(format!(
                "need at least 2 layer sizes, got {count}"
            )));
        }
        let sizes = (0..count)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if sizes.contains(&0) {
            return Err(Error::Format("zero layer size".into()));
        }
        let mut net = Self::zeros(&sizes);
        for p in net.params_mut() {
            *p = S::read_le(r.take(S::BYTES)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

const MAGIC: &[u8; 8] = b"AOIQNET\0";
const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

fn relu<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        v
    } else {
        S::zero()
    }
}

/// Parameter update rule.
#[derive(Debug, Clone)]
pub enum Optimizer<S> {
    /// Plain gradient descent, `theta -= lr * grad`.
    Sgd {
        lr: f64,
    },
    Adam(Adam<S>),
}

impl<S: Scalar> Optimizer<S> {
    pub fn apply(&mut self, net: &mut Mlp<S>, grads: &[Dense<S>]) {
        match self {
            Optimizer::Sgd { lr } => {
                let lr = S::from_f64(*lr);
                for (layer, g) in net.layers.iter_mut().zip(grads) {
                    layer.weights.scaled_add(-lr, &g.weights);
                    layer.bias.scaled_add(-lr, &g.bias);
                }
            }
            Optimizer::Adam(adam) => adam.apply(net, grads),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } => *lr,
            Optimizer::Adam(adam) => adam.current_lr(),
        }
    }
}

/// Adam with bias correction and exponential step-size decay
/// `lr * decay_rate^(t / decay_steps)`.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    step: u64,
    m: Vec<Dense<S>>,
    v: Vec<Dense<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(net: &Mlp<S>, lr: f64) -> Self {
        let sizes = net.layer_sizes();
        let zeros = || sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_rate: 1.0,
            decay_steps: 1,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn with_decay(mut self, rate: f64, steps: u64) -> Self {
        self.decay_rate = rate;
        self.decay_steps = steps.max(1);
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Step size that the next update will use.
    pub fn current_lr(&self) -> f64 {
        self.lr
            * self
                .decay_rate
                .powf(self.step as f64 / self.decay_steps as f64)
    }

    pub fn apply(&mut self, net: &mut Mlp<S>, grads: &[Dense<S>]) {
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one = S::one();
        let c1 = S::from_f64(1.0 / (1.0 - self.beta1.powi(t)));
        let c2 = S::from_f64(1.0 / (1.0 - self.beta2.powi(t)));
        let lr = S::from_f64(lr);
        let eps = S::from_f64(self.eps);
        let update = |p: &mut [S], m: &mut [S], v: &mut [S], g: &[S]| {
            for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(g) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= lr * (*m * c1) / ((*v * c2).sqrt() + eps);
            }
        };
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            update(
                contiguous_mut(&mut layer.weights),
                contiguous_mut(&mut m.weights),
                contiguous_mut(&mut v.weights),
                g.weights
                    .as_standard_layout()
                    .as_slice()
                    .expect("standard layout"),
            );
            update(
                contiguous_mut(&mut layer.bias),
                contiguous_mut(&mut m.bias),
                contiguous_mut(&mut v.bias),
                g.bias
                    .as_standard_layout()
                    .as_slice()
                    .expect("standard layout"),
            );
        }
    }
}

fn contiguous_mut<S, D: ndarray::Dimension>(a: &mut ndarray::Array<S, D>) -> &mut [S] {
    a.as_slice_mut().expect("standard layout")
}
