//! Encoder / decoder / generator / discriminator construction and cost accounting.
//!
//! Every network is a 32x32 DCGAN ladder of 4x4 kernels:
//!
//! ```text
//! encoder:  C -> c1 -> c2 -> c3   (stride 2, padding 1, BN, LeakyReLU)   32 -> 16 -> 8 -> 4
//!           c3 -> out             (stride 1, padding 0, bias)            4 -> 1
//! decoder:  d -> c3               (stride 1, padding 0, BN, ReLU)        1 -> 4
//!           c3 -> c2 -> c1        (stride 2, padding 1, BN, ReLU)        4 -> 8 -> 16
//!           c1 -> C               (stride 2, padding 1, bias, Tanh)      16 -> 32
//! ```
//!
//! The generator chains encoder, decoder and a second encoder. The
//! discriminator is an encoder with a single sigmoid output whose third block
//! is the feature tap used for feature matching.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{init_dcgan, Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Layer, Parameterized, Stack, StackCache, Stage};
use crate::tensor::{Real, Tensor};

pub const IMAGE_SIZE: usize = 32;
pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const DEFAULT_LATENT_DIM: usize = 256;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("input shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
}

/// Channel layout of one network (teacher or student).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_channels: usize,
    pub image_size: usize,
    pub channels: [usize; 3],
    pub latent_dim: usize,
    pub kernel: usize,
    pub stride: usize,
    pub leaky_slope: f64,
}

impl ArchSpec {
    pub fn new(input_channels: usize, channels: [usize; 3], latent_dim: usize) -> Self {
        Self {
            input_channels,
            image_size: IMAGE_SIZE,
            channels,
            latent_dim,
            kernel: KERNEL,
            stride: STRIDE,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// 64-128-256 teacher.
    pub fn teacher(input_channels: usize) -> Self {
        Self::new(input_channels, [64, 128, 256], DEFAULT_LATENT_DIM)
    }

    pub fn student_cifar10() -> Self {
        Self::new(3, [8, 16, 64], DEFAULT_LATENT_DIM)
    }

    pub fn student_mnist() -> Self {
        Self::new(1, [2, 4, 8], DEFAULT_LATENT_DIM)
    }

    pub fn student_fmnist() -> Self {
        Self::new(1, [1, 2, 4], DEFAULT_LATENT_DIM)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidSpec(msg));
        if self.input_channels != 1 && self.input_channels != 3 {
            return bad(format!("input_channels must be 1 or 3, got {}", self.input_channels));
        }
        if self.image_size != IMAGE_SIZE {
            return bad(format!("image_size must be {IMAGE_SIZE}, got {}", self.image_size));
        }
        if self.kernel != KERNEL || self.stride != STRIDE {
            return bad(format!("kernel/stride must be {KERNEL}/{STRIDE}, got {}/{}", self.kernel, self.stride));
        }
        if self.channels.contains(&0) || self.latent_dim == 0 {
            return bad("channel widths and latent_dim must be positive".into());
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope > 0.0) {
            return bad(format!("leaky_slope must be positive, got {}", self.leaky_slope));
        }
        Ok(())
    }

    pub fn image_shape(&self, batch: usize) -> Vec<usize> {
        vec![batch, self.input_channels, self.image_size, self.image_size]
    }
}

fn conv<T: Real>(cin: usize, cout: usize, stride: usize, padding: usize, bias: bool) -> Layer<T> {
    Layer::Conv(Conv2d {
        weight: Tensor::zeros(&[cout, cin, KERNEL, KERNEL]),
        bias: bias.then(|| Tensor::zeros(&[cout])),
        stride,
        padding,
    })
}

fn conv_t<T: Real>(cin: usize, cout: usize, stride: usize, padding: usize, bias: bool) -> Layer<T> {
    Layer::ConvTranspose(ConvTranspose2d {
        weight: Tensor::zeros(&[cin, cout, KERNEL, KERNEL]),
        bias: bias.then(|| Tensor::zeros(&[cout])),
        stride,
        padding,
    })
}

/// Encoder ladder ending in `out_dim` units and the given final activation.
fn encoder_stack<T: Real>(spec: &ArchSpec, out_dim: usize, last: Activation) -> Stack<T> {
    let [c1, c2, c3] = spec.channels;
    let act = Activation::LeakyRelu(spec.leaky_slope);
    let block = |cin, cout| Stage { layer: conv(cin, cout, STRIDE, 1, false), norm: Some(BatchNorm2d::new(cout)), activation: act };
    Stack {
        stages: vec![
            block(spec.input_channels, c1),
            block(c1, c2),
            block(c2, c3),
            Stage { layer: conv(c3, out_dim, 1, 0, true), norm: None, activation: last },
        ],
    }
}

/// Encoder with default (zero) weights: 32x32 image -> `latent_dim` units.
pub fn build_encoder<T: Real>(spec: &ArchSpec) -> Stack<T> {
    encoder_stack(spec, spec.latent_dim, Activation::Identity)
}

/// Decoder with default (zero) weights: `latent_dim` units -> 32x32 image in [-1, 1].
pub fn build_decoder<T: Real>(spec: &ArchSpec) -> Stack<T> {
    let [c1, c2, c3] = spec.channels;
    let block = |layer, cout| Stage { layer, norm: Some(BatchNorm2d::new(cout)), activation: Activation::Relu };
    Stack {
        stages: vec![
            block(conv_t(spec.latent_dim, c3, 1, 0, false), c3),
            block(conv_t(c3, c2, STRIDE, 1, false), c2),
            block(conv_t(c2, c1, STRIDE, 1, false), c1),
            Stage { layer: conv_t(c1, spec.input_channels, STRIDE, 1, true), norm: None, activation: Activation::Tanh },
        ],
    }
}

fn check_images<T: Real>(spec: &ArchSpec, x: &Tensor<T>) -> Result<(), ModelError> {
    let expected = spec.image_shape(x.batch());
    if x.shape() != expected.as_slice() || x.is_empty() {
        return Err(ModelError::ShapeMismatch { expected, found: x.shape().to_vec() });
    }
    Ok(())
}

/// Output of one generator pass: latent code, reconstruction, re-encoded latent code.
#[derive(Clone, Debug, PartialEq)]
pub struct GenOutput<T> {
    pub z1: Tensor<T>,
    pub x_hat: Tensor<T>,
    pub z2: Tensor<T>,
}

#[derive(Debug)]
pub struct GenCache<T> {
    encoder: StackCache<T>,
    decoder: StackCache<T>,
    reencoder: StackCache<T>,
}

/// Encoder-decoder-encoder generator.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub spec: ArchSpec,
    pub encoder: Stack<T>,
    pub decoder: Stack<T>,
    pub reencoder: Stack<T>,
}

impl<T: Real> Generator<T> {
    /// Generator with zero conv weights and unit batch-norm scales.
    pub fn zeroed(spec: &ArchSpec) -> Self {
        Self { spec: *spec, encoder: build_encoder(spec), decoder: build_decoder(spec), reencoder: build_encoder(spec) }
    }

    pub fn new<R: Rng + ?Sized>(spec: &ArchSpec, rng: &mut R) -> Self {
        let mut g = Self::zeroed(spec);
        init_dcgan(&mut g.encoder, rng);
        init_dcgan(&mut g.decoder, rng);
        init_dcgan(&mut g.reencoder, rng);
        g
    }

    /// Evaluation-mode pass (running batch-norm statistics).
    pub fn forward(&self, x: &Tensor<T>) -> Result<GenOutput<T>, ModelError> {
        check_images(&self.spec, x)?;
        let z1 = self.encoder.forward_eval(x);
        let x_hat = self.decoder.forward_eval(&z1);
        let z2 = self.reencoder.forward_eval(&x_hat);
        Ok(GenOutput { z1, x_hat, z2 })
    }

    /// Training-mode pass (batch statistics, running estimates updated).
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(GenOutput<T>, GenCache<T>), ModelError> {
        check_images(&self.spec, x)?;
        let (z1, encoder) = self.encoder.forward_train(x);
        let (x_hat, decoder) = self.decoder.forward_train(&z1);
        let (z2, reencoder) = self.reencoder.forward_train(&x_hat);
        Ok((GenOutput { z1, x_hat, z2 }, GenCache { encoder, decoder, reencoder }))
    }

    /// Accumulates parameter gradients given upstream gradients on the three outputs.
    pub fn backward(&self, cache: &GenCache<T>, g_z1: Tensor<T>, mut g_x_hat: Tensor<T>, g_z2: Tensor<T>, grads: &mut Generator<T>) {
        let through_re = self.reencoder.backward(&cache.reencoder, g_z2, Some(&mut grads.reencoder), true).expect("input grad");
        g_x_hat.add_scaled(&through_re, T::one());
        let mut g_latent = self.decoder.backward(&cache.decoder, g_x_hat, Some(&mut grads.decoder), true).expect("input grad");
        g_latent.add_scaled(&g_z1, T::one());
        self.encoder.backward(&cache.encoder, g_latent, Some(&mut grads.encoder), false);
    }
}

impl<T: Real> Parameterized<T> for Generator<T> {
    fn visit<'a>(&'a self, prefix: &str, params: &mut Vec<(String, &'a Tensor<T>)>, buffers: &mut Vec<(String, &'a Tensor<T>)>) {
        let p = |s: &str| if prefix.is_empty() { s.to_string() } else { format!("{prefix}.{s}") };
        self.encoder.visit(&p("encoder"), params, buffers);
        self.decoder.visit(&p("decoder"), params, buffers);
        self.reencoder.visit(&p("reencoder"), params, buffers);
    }

    fn visit_mut<'a>(
        &'a mut self,
        prefix: &str,
        params: &mut Vec<(String, &'a mut Tensor<T>)>,
        buffers: &mut Vec<(String, &'a mut Tensor<T>)>,
    ) {
        let p = |s: &str| if prefix.is_empty() { s.to_string() } else { format!("{prefix}.{s}") };
        self.encoder.visit_mut(&p("encoder"), params, buffers);
        self.decoder.visit_mut(&p("decoder"), params, buffers);
        self.reencoder.visit_mut(&p("reencoder"), params, buffers);
    }
}

/// Index of the stage whose output is the feature tap.
const FEATURE_STAGE: usize = 2;

#[derive(Debug)]
pub struct DiscCache<T> {
    trunk: StackCache<T>,
    head: Option<StackCache<T>>,
}

/// Encoder trunk with a single sigmoid unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub spec: ArchSpec,
    pub net: Stack<T>,
}

/// Discriminator probabilities (`[N, 1, 1, 1]`) and feature-tap activations (`[N, c3, 4, 4]`).
#[derive(Clone, Debug, PartialEq)]
pub struct DiscOutput<T> {
    pub prob: Tensor<T>,
    pub features: Tensor<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn zeroed(spec: &ArchSpec) -> Self {
        Self { spec: *spec, net: encoder_stack(spec, 1, Activation::Sigmoid) }
    }

    pub fn new<R: Rng + ?Sized>(spec: &ArchSpec, rng: &mut R) -> Self {
        let mut d = Self::zeroed(spec);
        init_dcgan(&mut d.net, rng);
        d
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<DiscOutput<T>, ModelError> {
        check_images(&self.spec, x)?;
        let features = self.net.forward_eval_range(x, 0..FEATURE_STAGE + 1);
        let prob = self.net.forward_eval_range(&features, FEATURE_STAGE + 1..self.net.len());
        Ok(DiscOutput { prob, features })
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(DiscOutput<T>, DiscCache<T>), ModelError> {
        check_images(&self.spec, x)?;
        let (features, trunk) = self.net.forward_train_range(x, 0..FEATURE_STAGE + 1);
        let n = self.net.len();
        let (prob, head) = self.net.forward_train_range(&features, FEATURE_STAGE + 1..n);
        Ok((DiscOutput { prob, features }, DiscCache { trunk, head: Some(head) }))
    }

    /// Training-mode pass through the trunk only.
    pub fn features_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, DiscCache<T>), ModelError> {
        check_images(&self.spec, x)?;
        let (features, trunk) = self.net.forward_train_range(x, 0..FEATURE_STAGE + 1);
        Ok((features, DiscCache { trunk, head: None }))
    }

    /// Parameter gradients from a gradient on the output probabilities.
    pub fn backward_prob(&self, cache: &DiscCache<T>, g_prob: Tensor<T>, grads: &mut Discriminator<T>) {
        let head = cache.head.as_ref().expect("backward_prob needs a full forward pass");
        let g_feat = self.net.backward(head, g_prob, Some(&mut grads.net), true).expect("feature grad");
        self.net.backward(&cache.trunk, g_feat, Some(&mut grads.net), false);
    }

    /// Input gradient from a gradient on the feature tap; parameters untouched.
    pub fn backward_features_to_input(&self, cache: &DiscCache<T>, g_features: Tensor<T>) -> Tensor<T> {
        self.net.backward(&cache.trunk, g_features, None, true).expect("input grad")
    }
}

impl<T: Real> Parameterized<T> for Discriminator<T> {
    fn visit<'a>(&'a self, prefix: &str, params: &mut Vec<(String, &'a Tensor<T>)>, buffers: &mut Vec<(String, &'a Tensor<T>)>) {
        self.net.visit(prefix, params, buffers);
    }

    fn visit_mut<'a>(
        &'a mut self,
        prefix: &str,
        params: &mut Vec<(String, &'a mut Tensor<T>)>,
        buffers: &mut Vec<(String, &'a mut Tensor<T>)>,
    ) {
        self.net.visit_mut(prefix, params, buffers);
    }
}

/// Generator size and forward cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub param_count: u64,
    /// Multiply-accumulates of one forward pass on one image.
    pub flop_count: u64,
}

impl CostReport {
    pub fn of(spec: &ArchSpec) -> Self {
        Self { param_count: count_params(spec), flop_count: count_flops(spec) }
    }

    /// `(param ratio, flop ratio)` of `self` over `other`.
    pub fn ratio_over(&self, other: &CostReport) -> (f64, f64) {
        (
            self.param_count as f64 / other.param_count as f64,
            self.flop_count as f64 / other.flop_count as f64,
        )
    }
}

/// Learned parameters of the generator: conv weights, biases of the two
/// un-normalized output layers of each sub-network, and batch-norm affine terms.
pub fn count_params(spec: &ArchSpec) -> u64 {
    let k2 = (spec.kernel * spec.kernel) as u64;
    let c = spec.input_channels as u64;
    let [c1, c2, c3] = spec.channels.map(|v| v as u64);
    let d = spec.latent_dim as u64;
    let norm = 2 * (c1 + c2 + c3);
    let encoder = k2 * (c * c1 + c1 * c2 + c2 * c3 + c3 * d) + d + norm;
    let decoder = k2 * (d * c3 + c3 * c2 + c2 * c1 + c1 * c) + c + norm;
    2 * encoder + decoder
}

/// Generator multiply-accumulates for one image. Convolutions count
/// `k*k*in*out` per output position; transposed convolutions per input position.
/// Normalization, activations and biases are excluded.
pub fn count_flops(spec: &ArchSpec) -> u64 {
    let k2 = (spec.kernel * spec.kernel) as u64;
    let c = spec.input_channels as u64;
    let [c1, c2, c3] = spec.channels.map(|v| v as u64);
    let d = spec.latent_dim as u64;
    let s = spec.image_size as u64;
    let (p1, p2, p3) = ((s / 2).pow(2), (s / 4).pow(2), (s / 8).pow(2));
    let encoder = k2 * (c * c1 * p1 + c1 * c2 * p2 + c2 * c3 * p3 + c3 * d);
    let decoder = k2 * (d * c3 + c3 * c2 * p3 + c2 * c1 * p2 + c1 * c * p1);
    2 * encoder + decoder
}
