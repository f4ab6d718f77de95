//! TOML experiment configuration.
//!
//! ```toml
//! [data]
//! kind = "mnist"
//! root = "data/mnist-desk"     # or set KDGAN_DATA_ROOT
//! normal_class = 1
//! train_limit = 1000
//!
//! [teacher_train]
//! epochs = 15
//! batch_size = 16
//! seed = 0
//!
//! [student]
//! input_channels = 1
//! channels = [2, 4, 8]
//! latent_dim = 256
//! ```
//!
//! Omitted sections take their defaults; omitted architectures follow the
//! dataset (teacher ladder, dataset-specific student).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetKind;
use crate::distill::{Objectives, ProgressiveVariant, Structure, TrainConfig};
use crate::losses::{DistillWeights, LossWeights};
use crate::model::{ArchSpec, DEFAULT_LATENT_DIM, DEFAULT_LEAKY_SLOPE, IMAGE_SIZE, KERNEL, STRIDE};

pub const DATA_ROOT_ENV: &str = "KDGAN_DATA_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialization error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("{field}: {message}")]
    Field { field: &'static str, message: String },
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field, message: message.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DatasetKind,
    /// Dataset directory; falls back to `KDGAN_DATA_ROOT` when absent.
    pub root: Option<PathBuf>,
    #[serde(default)]
    pub normal_class: u8,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

/// What each suite cell trains before reporting its final AUC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SuiteTarget {
    /// Teacher GAN alone.
    #[default]
    Teacher,
    /// Teacher, then the configured distillation structure; reports the student.
    Kdgan,
    /// Teacher, then the configured progressive variant; reports the step-2 student.
    Progressive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub target: SuiteTarget,
    pub classes: Vec<u8>,
    pub repeats: usize,
    /// Seed of each repeat; missing entries use the repeat index.
    pub seeds: Vec<u64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { target: SuiteTarget::Teacher, classes: (0..10).collect(), repeats: 3, seeds: vec![0, 1, 2] }
    }
}

impl SuiteConfig {
    pub fn seed(&self, repeat: usize) -> u64 {
        self.seeds.get(repeat).copied().unwrap_or(repeat as u64)
    }
}

/// Partial architecture: anything omitted follows the dataset default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub input_channels: Option<usize>,
    pub channels: Option<[usize; 3]>,
    pub latent_dim: Option<usize>,
    pub leaky_slope: Option<f64>,
}

impl ArchConfig {
    fn resolve(&self, default: ArchSpec) -> ArchSpec {
        ArchSpec {
            input_channels: self.input_channels.unwrap_or(default.input_channels),
            image_size: IMAGE_SIZE,
            channels: self.channels.unwrap_or(default.channels),
            latent_dim: self.latent_dim.unwrap_or(default.latent_dim),
            kernel: KERNEL,
            stride: STRIDE,
            leaky_slope: self.leaky_slope.unwrap_or(DEFAULT_LEAKY_SLOPE),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub teacher: ArchConfig,
    #[serde(default)]
    pub student: ArchConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub distill: DistillWeights,
    /// Distillation structure (1-4) used by `distill` and kdgan suites.
    pub structure: Option<u32>,
    /// Progressive variant (23 or 24).
    pub variant: Option<u32>,
    pub teacher_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub teacher_train: TrainConfig,
    /// Distillation runs and the first progressive step.
    #[serde(default)]
    pub student_train: TrainConfig,
    /// Second progressive step.
    #[serde(default)]
    pub step2_train: TrainConfig,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub suite: SuiteConfig,
}

impl ExperimentConfig {
    /// Minimal configuration for a dataset; everything else at defaults.
    pub fn for_dataset(kind: DatasetKind, root: Option<PathBuf>, normal_class: u8) -> Self {
        Self {
            data: DataConfig { kind, root, normal_class, train_limit: None, test_limit: None },
            teacher: ArchConfig::default(),
            student: ArchConfig::default(),
            loss: LossWeights::default(),
            distill: DistillWeights::default(),
            structure: None,
            variant: None,
            teacher_checkpoint: None,
            teacher_train: TrainConfig::default(),
            student_train: TrainConfig::default(),
            step2_train: TrainConfig::default(),
            output_dir: None,
            suite: SuiteConfig::default(),
        }
    }

    /// Parses and validates.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative paths in a config file are relative to the file.
        if let Some(base) = path.parent() {
            for p in [cfg.data.root.as_mut(), cfg.teacher_checkpoint.as_mut(), cfg.output_dir.as_mut()].into_iter().flatten() {
                if p.is_relative() && !p.exists() && base.join(&*p).exists() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.data_root()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// Applies one seed to every training stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        for t in [&mut self.teacher_train, &mut self.student_train, &mut self.step2_train] {
            t.seed = seed;
        }
        self
    }

    /// Dataset directory from the config, else from the environment. Must exist.
    pub fn data_root(&self) -> Result<PathBuf, ConfigError> {
        let root = match &self.data.root {
            Some(r) => r.clone(),
            None => std::env::var_os(DATA_ROOT_ENV)
                .map(PathBuf::from)
                .ok_or_else(|| field("data.root", format!("not set and {DATA_ROOT_ENV} is not defined")))?,
        };
        if !root.is_dir() {
            return Err(field("data.root", format!("{} is not a directory", root.display())));
        }
        Ok(root)
    }

    pub fn teacher_spec(&self) -> ArchSpec {
        self.teacher.resolve(ArchSpec::teacher(self.data.kind.channels()))
    }

    pub fn student_spec(&self) -> ArchSpec {
        let default = match self.data.kind {
            DatasetKind::Mnist => ArchSpec::student_mnist(),
            DatasetKind::Fmnist => ArchSpec::student_fmnist(),
            DatasetKind::Cifar10 => ArchSpec::student_cifar10(),
        };
        self.student.resolve(ArchSpec { latent_dim: DEFAULT_LATENT_DIM, ..default })
    }

    pub fn objectives(&self) -> Objectives {
        Objectives { loss: self.loss, distill: self.distill }
    }

    pub fn structure(&self) -> Result<Structure, ConfigError> {
        let s = self.structure.ok_or_else(|| field("structure", "not set"))?;
        Structure::from_index(s).ok_or_else(|| field("structure", format!("{s} is not one of 1, 2, 3, 4")))
    }

    pub fn variant(&self) -> Result<ProgressiveVariant, ConfigError> {
        let v = self.variant.ok_or_else(|| field("variant", "not set"))?;
        ProgressiveVariant::from_code(v).ok_or_else(|| field("variant", format!("{v} is not 23 or 24")))
    }

    /// Checks everything that does not touch the filesystem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.data.normal_class > 9 {
            return Err(field("data.normal_class", format!("{} is not a class in 0..=9", self.data.normal_class)));
        }
        if self.data.train_limit == Some(0) {
            return Err(field("data.train_limit", "must be positive"));
        }
        self.teacher_spec().validate().map_err(|e| field("teacher", e.to_string()))?;
        self.student_spec().validate().map_err(|e| field("student", e.to_string()))?;
        if !self.loss.is_valid() {
            return Err(field("loss", "weights must be finite and non-negative"));
        }
        if !self.distill.is_valid() {
            return Err(field("distill", "weights must be finite and non-negative"));
        }
        for (name, t) in [("teacher_train", &self.teacher_train), ("student_train", &self.student_train), ("step2_train", &self.step2_train)] {
            t.validate().map_err(|e| field(name, e.to_string()))?;
        }
        if self.structure.is_some() {
            self.structure()?;
        }
        if self.variant.is_some() {
            self.variant()?;
        }
        if self.suite.classes.iter().any(|&c| c > 9) {
            return Err(field("suite.classes", "classes must lie in 0..=9"));
        }
        if self.suite.repeats == 0 {
            return Err(field("suite.repeats", "must be positive"));
        }
        Ok(())
    }
}
