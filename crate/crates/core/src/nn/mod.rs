//! Minimal layer library with explicit forward/backward passes.
//!
//! Layers never hold gradients. A gradient is an instance of the same type
//! (see [`Parameterized::zeros_like`]) that backward passes accumulate into, and
//! forward passes return their intermediate values as caches instead of storing
//! them, so one network can be run on several batches before backpropagating.

mod adam;
mod batchnorm;
mod conv;

pub use adam::{Adam, AdamConfig};
pub use batchnorm::{BatchNorm2d, BnCache, BN_EPS, BN_MOMENTUM};
pub use conv::{col2im, im2col, Conv2d, ConvCache, ConvGeometry, ConvTranspose2d};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Real, Tensor};

/// Access to named parameter tensors (learned) and buffers (running statistics).
pub trait Parameterized<T: Real>: Clone {
    fn visit<'a>(&'a self, prefix: &str, params: &mut Vec<(String, &'a Tensor<T>)>, buffers: &mut Vec<(String, &'a Tensor<T>)>);

    fn visit_mut<'a>(
        &'a mut self,
        prefix: &str,
        params: &mut Vec<(String, &'a mut Tensor<T>)>,
        buffers: &mut Vec<(String, &'a mut Tensor<T>)>,
    );

    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let (mut p, mut b) = (Vec::new(), Vec::new());
        self.visit("", &mut p, &mut b);
        p
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let (mut p, mut b) = (Vec::new(), Vec::new());
        self.visit_mut("", &mut p, &mut b);
        p
    }

    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let (mut p, mut b) = (Vec::new(), Vec::new());
        self.visit("", &mut p, &mut b);
        b
    }

    /// Parameters followed by buffers, in a stable order.
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let (mut p, mut b) = (Vec::new(), Vec::new());
        self.visit("", &mut p, &mut b);
        p.extend(b);
        p
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let (mut p, mut b) = (Vec::new(), Vec::new());
        self.visit_mut("", &mut p, &mut b);
        p.extend(b);
        p
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_params();
        z
    }

    fn zero_params(&mut self) {
        for (_, p) in self.params_mut() {
            p.fill(T::zero());
        }
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Real>(self, x: &mut Tensor<T>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero())),
            Activation::LeakyRelu(slope) => {
                let s = T::from_f64_lossy(slope);
                x.data_mut().iter_mut().for_each(|v| {
                    if *v <= T::zero() {
                        *v = *v * s
                    }
                })
            }
            Activation::Tanh => x.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Sigmoid => x.data_mut().iter_mut().for_each(|v| *v = T::one() / (T::one() + (-*v).exp())),
        }
    }

    /// Chains `gy` through the activation given its output `y`.
    pub fn backward<T: Real>(self, y: &Tensor<T>, gy: &mut Tensor<T>) {
        let g = gy.data_mut().iter_mut().zip(y.data());
        match self {
            Activation::Identity => {}
            Activation::Relu => g.for_each(|(g, &y)| {
                if y <= T::zero() {
                    *g = T::zero()
                }
            }),
            Activation::LeakyRelu(slope) => {
                let s = T::from_f64_lossy(slope);
                g.for_each(|(g, &y)| {
                    if y <= T::zero() {
                        *g *= s
                    }
                })
            }
            Activation::Tanh => g.for_each(|(g, &y)| *g *= T::one() - y * y),
            Activation::Sigmoid => g.for_each(|(g, &y)| *g *= y * (T::one() - y)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    ConvTranspose(ConvTranspose2d<T>),
}

impl<T: Real> Layer<T> {
    fn parts(&self) -> (&Tensor<T>, Option<&Tensor<T>>) {
        match self {
            Layer::Conv(c) => (&c.weight, c.bias.as_ref()),
            Layer::ConvTranspose(c) => (&c.weight, c.bias.as_ref()),
        }
    }

    fn parts_mut(&mut self) -> (&mut Tensor<T>, Option<&mut Tensor<T>>) {
        match self {
            Layer::Conv(c) => (&mut c.weight, c.bias.as_mut()),
            Layer::ConvTranspose(c) => (&mut c.weight, c.bias.as_mut()),
        }
    }
}

/// Convolution (or transposed convolution), optional batch norm, activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage<T> {
    pub layer: Layer<T>,
    pub norm: Option<BatchNorm2d<T>>,
    pub activation: Activation,
}

#[derive(Debug)]
pub struct StageCache<T> {
    input_shape: Vec<usize>,
    conv: ConvCache<T>,
    norm: Option<BnCache<T>>,
    output: Tensor<T>,
}

impl<T: Real> Stage<T> {
    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = match &self.layer {
            Layer::Conv(c) => c.forward(x),
            Layer::ConvTranspose(c) => c.forward(x),
        };
        if let Some(bn) = &self.norm {
            y = bn.forward_eval(&y);
        }
        self.activation.apply(&mut y);
        y
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, StageCache<T>) {
        let (mut y, conv) = match &self.layer {
            Layer::Conv(c) => c.forward_cached(x),
            Layer::ConvTranspose(c) => c.forward_cached(x),
        };
        let norm = match &mut self.norm {
            Some(bn) => {
                let (out, cache) = bn.forward_train(&y);
                y = out;
                Some(cache)
            }
            None => None,
        };
        self.activation.apply(&mut y);
        let cache = StageCache { input_shape: x.shape().to_vec(), conv, norm, output: y.clone() };
        (y, cache)
    }

    pub fn backward(
        &self,
        cache: &StageCache<T>,
        mut gy: Tensor<T>,
        grad: Option<&mut Stage<T>>,
        need_input: bool,
    ) -> Option<Tensor<T>> {
        self.activation.backward(&cache.output, &mut gy);
        let (grad_layer, grad_norm) = match grad {
            Some(g) => (Some(&mut g.layer), g.norm.as_mut()),
            None => (None, None),
        };
        if let (Some(bn), Some(bc)) = (&self.norm, &cache.norm) {
            gy = bn.backward(bc, &gy, grad_norm);
        }
        let shape = need_input.then_some(cache.input_shape.as_slice());
        match (&self.layer, grad_layer) {
            (Layer::Conv(c), Some(Layer::Conv(g))) => c.backward(&cache.conv, &gy, Some(g), shape),
            (Layer::ConvTranspose(c), Some(Layer::ConvTranspose(g))) => c.backward(&cache.conv, &gy, Some(g), shape),
            (Layer::Conv(c), None) => c.backward(&cache.conv, &gy, None, shape),
            (Layer::ConvTranspose(c), None) => c.backward(&cache.conv, &gy, None, shape),
            _ => panic!("gradient layout does not match layer"),
        }
    }
}

impl<T: Real> Parameterized<T> for Stage<T> {
    fn visit<'a>(&'a self, prefix: &str, params: &mut Vec<(String, &'a Tensor<T>)>, buffers: &mut Vec<(String, &'a Tensor<T>)>) {
        let (w, b) = self.layer.parts();
        params.push((join(prefix, "conv.weight"), w));
        if let Some(b) = b {
            params.push((join(prefix, "conv.bias"), b));
        }
        if let Some(bn) = &self.norm {
            params.push((join(prefix, "bn.weight"), &bn.weight));
            params.push((join(prefix, "bn.bias"), &bn.bias));
            buffers.push((join(prefix, "bn.running_mean"), &bn.running_mean));
            buffers.push((join(prefix, "bn.running_var"), &bn.running_var));
        }
    }

    fn visit_mut<'a>(
        &'a mut self,
        prefix: &str,
        params: &mut Vec<(String, &'a mut Tensor<T>)>,
        buffers: &mut Vec<(String, &'a mut Tensor<T>)>,
    ) {
        let (w, b) = self.layer.parts_mut();
        params.push((join(prefix, "conv.weight"), w));
        if let Some(b) = b {
            params.push((join(prefix, "conv.bias"), b));
        }
        if let Some(bn) = &mut self.norm {
            params.push((join(prefix, "bn.weight"), &mut bn.weight));
            params.push((join(prefix, "bn.bias"), &mut bn.bias));
            buffers.push((join(prefix, "bn.running_mean"), &mut bn.running_mean));
            buffers.push((join(prefix, "bn.running_var"), &mut bn.running_var));
        }
    }
}

/// A chain of stages. Forward and backward passes may cover a sub-range, which
/// is how the discriminator exposes its feature tap.
#[derive(Clone, Debug, PartialEq)]
pub struct Stack<T> {
    pub stages: Vec<Stage<T>>,
}

#[derive(Debug)]
pub struct StackCache<T> {
    start: usize,
    stages: Vec<StageCache<T>>,
}

impl<T: Real> Stack<T> {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn forward_eval_range(&self, x: &Tensor<T>, range: std::ops::Range<usize>) -> Tensor<T> {
        let mut h = x.clone();
        for stage in &self.stages[range] {
            h = stage.forward_eval(&h);
        }
        h
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_eval_range(x, 0..self.len())
    }

    pub fn forward_train_range(&mut self, x: &Tensor<T>, range: std::ops::Range<usize>) -> (Tensor<T>, StackCache<T>) {
        let start = range.start;
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(range.len());
        for stage in &mut self.stages[range] {
            let (y, c) = stage.forward_train(&h);
            caches.push(c);
            h = y;
        }
        (h, StackCache { start, stages: caches })
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, StackCache<T>) {
        let n = self.len();
        self.forward_train_range(x, 0..n)
    }

    /// Backpropagates `gy` through the stages recorded in `cache`.
    /// Returns the gradient w.r.t. the range input when `need_input` is set.
    pub fn backward(
        &self,
        cache: &StackCache<T>,
        gy: Tensor<T>,
        mut grads: Option<&mut Stack<T>>,
        need_input: bool,
    ) -> Option<Tensor<T>> {
        let mut g = gy;
        let count = cache.stages.len();
        for (offset, stage_cache) in cache.stages.iter().enumerate().rev() {
            let idx = cache.start + offset;
            let stage_grad = grads.as_deref_mut().map(|s| &mut s.stages[idx]);
            let wants_input = offset > 0 || need_input;
            match self.stages[idx].backward(stage_cache, g, stage_grad, wants_input) {
                Some(next) => g = next,
                None => {
                    debug_assert!(offset == 0 && count > 0);
                    return None;
                }
            }
        }
        Some(g)
    }
}

impl<T: Real> Parameterized<T> for Stack<T> {
    fn visit<'a>(&'a self, prefix: &str, params: &mut Vec<(String, &'a Tensor<T>)>, buffers: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&join(prefix, &i.to_string()), params, buffers);
        }
    }

    fn visit_mut<'a>(
        &'a mut self,
        prefix: &str,
        params: &mut Vec<(String, &'a mut Tensor<T>)>,
        buffers: &mut Vec<(String, &'a mut Tensor<T>)>,
    ) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&join(prefix, &i.to_string()), params, buffers);
        }
    }
}

/// DCGAN-style initialization: conv weights ~ N(0, 0.02), biases 0,
/// batch-norm scale ~ N(1, 0.02), shift 0.
pub fn init_dcgan<T: Real, R: Rng + ?Sized>(stack: &mut Stack<T>, rng: &mut R) {
    let conv = Normal::new(0.0, 0.02).expect("valid normal");
    let scale = Normal::new(1.0, 0.02).expect("valid normal");
    for stage in &mut stack.stages {
        let (w, b) = stage.layer.parts_mut();
        w.data_mut().iter_mut().for_each(|v| *v = T::from_f64_lossy(conv.sample(rng)));
        if let Some(b) = b {
            b.fill(T::zero());
        }
        if let Some(bn) = &mut stage.norm {
            bn.weight.data_mut().iter_mut().for_each(|v| *v = T::from_f64_lossy(scale.sample(rng)));
            bn.bias.fill(T::zero());
        }
    }
}
