//! One-class novelty detection with encoder-decoder-encoder GANs and
//! progressive teacher-student distillation.
//!
//! - [`data`]: IDX / CIFAR-10 loading, one-class splits, 32x32 preprocessing.
//! - [`model`]: generator and discriminator networks, parameter/FLOP accounting.
//! - [`losses`]: reconstruction, latent, feature-matching, cross-entropy and distillation losses.
//! - [`distill`]: teacher training, the four distillation structures and the two-step schedule.
//! - [`eval`]: novelty scores, ROC-AUC and per-class suite reports.
//! - [`checkpoint`], [`config`]: persistence and experiment configuration.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod distill;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod tensor;

pub use model::{ArchSpec, CostReport, Discriminator, Generator};
pub use tensor::{Real, Tensor};
